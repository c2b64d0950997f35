#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <functional>

#include "sqens/data.hpp"
#include "sqens/errors.hpp"

using namespace sqens;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "sqens_test_data";
  fs::create_directories(dir);
  return dir / name;
}

Dataset four_images() {
  Dataset d;
  d.height = d.width = 28;
  d.images = Tensor<float>::Zero(4, 784);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 784; j += 7 + i) d.images(i, j) = float((j * 13 + i) % 256) / 255.0f;
  d.labels = {3, 0, 9, 7};
  return d;
}

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an error");
  return ErrorKind::internal_invariant;
}

void write_bytes(const fs::path& p, const std::vector<unsigned char>& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_CASE("IDX round trip on a four-image fixture") {
  const auto d = four_images();
  save_mnist(d, scratch("img"), scratch("lab"));
  const auto back = load_mnist(scratch("img"), scratch("lab"));
  CHECK(back.size() == 4);
  CHECK(back.height == 28);
  CHECK(back.width == 28);
  CHECK(back.dim() == 784);
  CHECK(back.images.minCoeff() >= 0.0f);
  CHECK(back.images.maxCoeff() <= 1.0f);
  CHECK(back.labels == d.labels);
  CHECK((back.images - d.images).cwiseAbs().maxCoeff() < 1e-7f);
}

TEST_CASE("IDX errors are distinct") {
  const auto d = four_images();
  save_mnist(d, scratch("img"), scratch("lab"));
  CHECK(kind_of([] { load_mnist(scratch("lab"), scratch("lab")); }) == ErrorKind::wrong_magic);
  CHECK(kind_of([] { load_mnist(scratch("img"), scratch("img")); }) == ErrorKind::wrong_magic);
  CHECK(kind_of([] { load_mnist(scratch("missing"), scratch("lab")); }) == ErrorKind::io);

  // Three labels for four images.
  write_bytes(scratch("lab3"), {0, 0, 8, 1, 0, 0, 0, 3, 1, 2, 3});
  CHECK(kind_of([] { load_mnist(scratch("img"), scratch("lab3")); }) == ErrorKind::count_mismatch);

  write_bytes(scratch("lab_bad"), {0, 0, 8, 1, 0, 0, 0, 4, 1, 2, 12, 3});
  CHECK(kind_of([] { load_mnist(scratch("img"), scratch("lab_bad")); }) == ErrorKind::label_out_of_range);

  write_bytes(scratch("lab_short"), {0, 0, 8, 1, 0, 0, 0, 4, 1, 2});
  CHECK(kind_of([] { load_mnist(scratch("img"), scratch("lab_short")); }) == ErrorKind::truncated);

  fs::copy_file(scratch("img"), scratch("img_short"), fs::copy_options::overwrite_existing);
  fs::resize_file(scratch("img_short"), 16 + 3 * 784);
  CHECK(kind_of([] { load_mnist(scratch("img_short"), scratch("lab")); }) == ErrorKind::truncated);
}

TEST_CASE("synthetic blobs") {
  const auto a = synth_blobs(50, 3, 4, 10.0, 7);
  const auto b = synth_blobs(50, 3, 4, 10.0, 7);
  CHECK(a.size() == 150);
  CHECK(a.dim() == 4);
  CHECK(a.n_classes == 3);
  CHECK(a.images == b.images);
  CHECK(a.labels == b.labels);
  CHECK(synth_blobs(50, 3, 4, 10.0, 8).images != a.images);
  CHECK(a.images.minCoeff() >= 0.0f);
  CHECK(a.images.maxCoeff() <= 1.0f);

  // The class coordinate is the largest on average.
  for (int c = 0; c < 3; ++c) {
    Eigen::RowVectorXf mean = Eigen::RowVectorXf::Zero(4);
    int n = 0;
    for (int i = 0; i < a.size(); ++i)
      if (a.labels[static_cast<std::size_t>(i)] == c) mean += a.images.row(i), ++n;
    mean /= float(n);
    Eigen::Index arg = 0;
    mean.maxCoeff(&arg);
    CHECK(arg == c);
  }
  CHECK_THROWS_AS(synth_blobs(0, 3, 4, 1.0, 1), Error);
  CHECK_THROWS_AS(synth_blobs(5, 5, 4, 1.0, 1), Error);
}

TEST_CASE("subset and head") {
  const auto a = synth_blobs(4, 2, 3, 5.0, 1);
  const auto s = a.subset({3, 0});
  CHECK(s.size() == 2);
  CHECK(s.labels[0] == a.labels[3]);
  CHECK(s.images.row(1) == a.images.row(0));
  CHECK(a.head(100).size() == a.size());
  CHECK_THROWS_AS(a.subset({8}), Error);
}

TEST_CASE("bundled MNIST subset loads") {
  const fs::path root = SQENS_SOURCE_DIR "/data/mnist";
  if (!fs::exists(root / "t10k-images-idx3-ubyte")) return;
  const auto test = load_mnist(root / "t10k-images-idx3-ubyte", root / "t10k-labels-idx1-ubyte");
  CHECK(test.size() == 2000);
  CHECK(test.dim() == 784);
  const auto train = load_mnist(root / "train-images-idx3-ubyte", root / "train-labels-idx1-ubyte");
  CHECK(train.size() == 8000);
}
