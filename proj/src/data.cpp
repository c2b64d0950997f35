#include "sqens/data.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <iterator>

#include "sqens/errors.hpp"
#include "sqens/rng.hpp"

namespace sqens {

namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

std::vector<unsigned char> read_all(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot open " + p.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t at, const std::filesystem::path& p) {
  if (b.size() < at + 4) fail(ErrorKind::truncated, "truncated IDX header in " + p.string());
  return (std::uint32_t(b[at]) << 24) | (std::uint32_t(b[at + 1]) << 16) | (std::uint32_t(b[at + 2]) << 8) |
         std::uint32_t(b[at + 3]);
}

void put_be32(std::ofstream& out, std::uint32_t v) {
  const std::array<char, 4> b{char(v >> 24), char(v >> 16), char(v >> 8), char(v)};
  out.write(b.data(), 4);
}

}  // namespace

Dataset Dataset::subset(const std::vector<int>& indices) const {
  Dataset d;
  d.n_classes = n_classes;
  d.height = height;
  d.width = width;
  d.images.resize(static_cast<Eigen::Index>(indices.size()), images.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const int j = indices[i];
    if (j < 0 || j >= size()) fail(ErrorKind::out_of_range, "subset index outside the dataset");
    d.images.row(static_cast<Eigen::Index>(i)) = images.row(j);
    d.labels.push_back(labels[static_cast<std::size_t>(j)]);
  }
  return d;
}

Dataset Dataset::head(int n) const {
  std::vector<int> idx(static_cast<std::size_t>(std::clamp(n, 0, size())));
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
  return subset(idx);
}

Dataset load_mnist(const std::filesystem::path& images, const std::filesystem::path& labels) {
  const auto ib = read_all(images);
  const auto lb = read_all(labels);
  if (be32(ib, 0, images) != kImageMagic) fail(ErrorKind::wrong_magic, images.string() + " is not an IDX image file");
  if (be32(lb, 0, labels) != kLabelMagic) fail(ErrorKind::wrong_magic, labels.string() + " is not an IDX label file");
  const std::uint32_t n = be32(ib, 4, images);
  const std::uint32_t rows = be32(ib, 8, images);
  const std::uint32_t cols = be32(ib, 12, images);
  const std::uint32_t nl = be32(lb, 4, labels);
  if (n != nl) fail(ErrorKind::count_mismatch, "image and label counts differ");
  const std::size_t pixels = std::size_t(rows) * cols;
  if (ib.size() < 16 + std::size_t(n) * pixels) fail(ErrorKind::truncated, "truncated image payload");
  if (lb.size() < 8 + std::size_t(n)) fail(ErrorKind::truncated, "truncated label payload");

  Dataset d;
  d.height = static_cast<int>(rows);
  d.width = static_cast<int>(cols);
  d.images.resize(n, static_cast<Eigen::Index>(pixels));
  for (std::size_t i = 0; i < std::size_t(n) * pixels; ++i) d.images.data()[i] = float(ib[16 + i]) / 255.0f;
  d.labels.resize(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    const int y = lb[8 + i];
    if (y > 9) fail(ErrorKind::label_out_of_range, "label " + std::to_string(y) + " outside 0-9");
    d.labels[i] = y;
  }
  return d;
}

void save_mnist(const Dataset& d, const std::filesystem::path& images, const std::filesystem::path& labels) {
  std::ofstream im(images, std::ios::binary), lb(labels, std::ios::binary);
  if (!im || !lb) fail(ErrorKind::io, "cannot write IDX files");
  const int h = d.height > 0 ? d.height : 1;
  const int w = d.height > 0 ? d.width : d.dim();
  put_be32(im, kImageMagic);
  put_be32(im, static_cast<std::uint32_t>(d.size()));
  put_be32(im, static_cast<std::uint32_t>(h));
  put_be32(im, static_cast<std::uint32_t>(w));
  for (Eigen::Index i = 0; i < d.images.size(); ++i)
    im.put(static_cast<char>(std::lround(std::clamp(d.images.data()[i], 0.0f, 1.0f) * 255.0f)));
  put_be32(lb, kLabelMagic);
  put_be32(lb, static_cast<std::uint32_t>(d.size()));
  for (int y : d.labels) lb.put(static_cast<char>(y));
}

Dataset synth_blobs(int n_per_class, int classes, int dim, double separation, std::uint64_t seed) {
  if (n_per_class < 1 || classes < 2 || dim < 1) fail(ErrorKind::invalid_argument, "blob sizes must be positive");
  if (classes > dim) fail(ErrorKind::invalid_argument, "blobs need at least one dimension per class");
  if (separation < 0) fail(ErrorKind::invalid_argument, "separation must be non-negative");
  Rng rng = derive_rng(seed, {0x626c6f6273ULL});
  Dataset d;
  d.n_classes = classes;
  d.images.resize(n_per_class * classes, dim);
  const double scale = 1.0 / (separation + 8.0);
  int row = 0;
  for (int i = 0; i < n_per_class; ++i) {
    for (int c = 0; c < classes; ++c, ++row) {
      for (int j = 0; j < dim; ++j) {
        const double centre = (j == c % dim) ? separation : 0.0;
        const double x = (centre + standard_normal(rng) + 4.0) * scale;
        d.images(row, j) = static_cast<float>(std::clamp(x, 0.0, 1.0));
      }
      d.labels.push_back(c);
    }
  }
  return d;
}

}  // namespace sqens
