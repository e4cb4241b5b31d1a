// SPDX-License-Identifier: Apache-2.0
#include "imvae/io/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iterator>
#include <sstream>

namespace imvae::io {

void Dataset::validate() const {
  if (instances.rank() != 2) throw DimensionError("dataset instances must be a matrix, got " + shape_to_string(instances.shape()));
  if (labels.empty()) return;
  if (labels.size() != size())
    throw InvalidArgument("dataset has " + std::to_string(size()) + " instances but " + std::to_string(labels.size()) +
                          " labels");
  for (std::size_t y : labels)
    if (y >= n_classes)
      throw InvalidArgument("label " + std::to_string(y) + " outside [0, " + std::to_string(n_classes) + ")");
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out;
  out.instances = instances.gather_rows(indices);
  out.n_classes = n_classes;
  out.provenance = provenance;
  if (has_labels()) {
    out.labels.reserve(indices.size());
    for (std::size_t i : indices) out.labels.push_back(labels.at(i));
  }
  return out;
}

std::vector<std::size_t> Dataset::class_counts() const {
  std::vector<std::size_t> counts(n_classes, 0);
  for (std::size_t y : labels) ++counts.at(y);
  return counts;
}

namespace {

std::vector<unsigned char> read_all(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed for " + path);
  return bytes;
}

std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t at) {
  return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) | (std::uint32_t{b[at + 2]} << 8) |
         std::uint32_t{b[at + 3]};
}

std::uint32_t read_magic(const std::vector<unsigned char>& b, std::uint32_t expected, const std::string& path) {
  if (b.size() < 4) throw IdxTruncated(path + ": file shorter than the IDX magic");
  std::uint32_t magic = be32(b, 0);
  if (magic != expected) {
    std::ostringstream os;
    os << path << ": IDX magic 0x" << std::hex << magic << ", expected 0x" << expected;
    throw IdxWrongMagic(os.str());
  }
  return magic;
}

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  auto img = read_all(images_path);
  read_magic(img, kIdxImageMagic, images_path);
  if (img.size() < 16) throw IdxTruncated(images_path + ": header truncated");
  std::size_t n = be32(img, 4), h = be32(img, 8), w = be32(img, 12);
  std::size_t d = h * w;
  if (n == 0 || d == 0) throw IdxError(images_path + ": empty image set");
  if (img.size() < 16 + n * d)
    throw IdxTruncated(images_path + ": expected " + std::to_string(n * d) + " pixel bytes, found " +
                       std::to_string(img.size() - 16));

  Dataset out;
  out.instances = Tensor({n, d});
  for (std::size_t i = 0; i < n * d; ++i) out.instances[i] = img[16 + i] / 255.0;
  out.provenance = "idx:" + images_path;

  if (!labels_path.empty()) {
    auto lab = read_all(labels_path);
    read_magic(lab, kIdxLabelMagic, labels_path);
    if (lab.size() < 8) throw IdxTruncated(labels_path + ": header truncated");
    std::size_t m = be32(lab, 4);
    if (m != n)
      throw IdxCountMismatch(labels_path + ": " + std::to_string(m) + " labels for " + std::to_string(n) + " images");
    if (lab.size() < 8 + m) throw IdxTruncated(labels_path + ": label payload truncated");
    out.labels.resize(m);
    std::size_t max_label = 0;
    for (std::size_t i = 0; i < m; ++i) {
      out.labels[i] = lab[8 + i];
      max_label = std::max(max_label, out.labels[i]);
    }
    out.n_classes = max_label + 1;
  }
  return out;
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

bool parse_double(std::string s, double& out) {
  auto b = s.find_first_not_of(" \t\r");
  auto e = s.find_last_not_of(" \t\r");
  if (b == std::string::npos) return false;
  s = s.substr(b, e - b + 1);
  auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc() && res.ptr == s.data() + s.size();
}

}  // namespace

Dataset load_csv(const std::string& path, bool label_last) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::vector<double> values;
  std::vector<std::size_t> labels;
  std::size_t width = 0, rows = 0, line_no = 0;
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    auto cells = split_csv(line);
    std::vector<double> row(cells.size());
    bool numeric = true;
    for (std::size_t i = 0; i < cells.size() && numeric; ++i) numeric = parse_double(cells[i], row[i]);
    if (!numeric) {
      if (rows == 0 && width == 0) {
        width = cells.size();  // header line
        continue;
      }
      throw IoError(path + ":" + std::to_string(line_no) + ": non-numeric cell");
    }
    if (width == 0) width = cells.size();
    if (cells.size() != width)
      throw IoError(path + ":" + std::to_string(line_no) + ": expected " + std::to_string(width) + " columns, found " +
                    std::to_string(cells.size()));
    std::size_t features = label_last ? width - 1 : width;
    if (features == 0) throw IoError(path + ": no feature columns");
    if (label_last) {
      double y = row.back();
      if (y < 0 || y != std::floor(y)) throw IoError(path + ":" + std::to_string(line_no) + ": label is not a class index");
      labels.push_back(static_cast<std::size_t>(y));
    }
    values.insert(values.end(), row.begin(), row.begin() + static_cast<std::ptrdiff_t>(features));
    ++rows;
  }
  if (rows == 0) throw IoError(path + ": no data rows");
  Dataset out;
  std::size_t d = values.size() / rows;
  out.instances = Tensor({rows, d}, std::move(values));
  out.labels = std::move(labels);
  if (!out.labels.empty()) out.n_classes = *std::max_element(out.labels.begin(), out.labels.end()) + 1;
  out.provenance = "csv:" + path;
  return out;
}

Dataset binarize(const Dataset& data, double threshold) {
  if (!(threshold > 0.0 && threshold <= 1.0))
    throw InvalidArgument("binarize threshold must lie in (0, 1], got " + std::to_string(threshold));
  Dataset out = data;
  for (double& v : out.instances.data()) {
    if (!(v >= 0.0 && v <= 1.0)) throw InvalidArgument("binarize expects values in [0, 1], got " + std::to_string(v));
    v = v >= threshold ? 1.0 : 0.0;
  }
  out.provenance = data.provenance + "|binarized";
  return out;
}

std::vector<std::vector<double>> random_prototypes(std::size_t k, std::size_t d, RngStream& rng) {
  if (k == 0 || d == 0) throw InvalidArgument("random_prototypes needs k > 0 and d > 0");
  std::vector<std::vector<double>> out(k, std::vector<double>(d));
  for (auto& p : out)
    for (double& v : p) v = (rng.next_u64() >> 63) ? 1.0 : 0.0;
  return out;
}

Dataset synth_patterns(const SynthSpec& spec, RngStream& rng) {
  if (!(spec.flip_rate >= 0.0 && spec.flip_rate < 0.5))
    throw InvalidArgument("flip rate must lie in [0, 0.5), got " + std::to_string(spec.flip_rate));
  if (spec.prototypes.empty()) throw InvalidArgument("synth_patterns needs at least one prototype");
  if (spec.counts.size() != spec.prototypes.size())
    throw InvalidArgument("synth_patterns: " + std::to_string(spec.counts.size()) + " counts for " +
                          std::to_string(spec.prototypes.size()) + " prototypes");
  std::size_t d = spec.prototypes[0].size();
  if (d == 0) throw InvalidArgument("prototypes must be non-empty");
  std::size_t n = 0;
  for (std::size_t c = 0; c < spec.prototypes.size(); ++c) {
    if (spec.prototypes[c].size() != d) throw DimensionError("prototypes have different lengths");
    for (double v : spec.prototypes[c])
      if (v != 0.0 && v != 1.0) throw InvalidArgument("prototypes must be binary");
    n += spec.counts[c];
  }
  if (n == 0) throw InvalidArgument("synth_patterns: all counts are zero");

  Dataset out;
  out.instances = Tensor({n, d});
  out.labels.reserve(n);
  out.n_classes = spec.prototypes.size();
  std::size_t r = 0;
  for (std::size_t c = 0; c < spec.prototypes.size(); ++c) {
    for (std::size_t j = 0; j < spec.counts[c]; ++j, ++r) {
      auto row = out.instances.row(r);
      for (std::size_t i = 0; i < d; ++i) {
        double v = spec.prototypes[c][i];
        row[i] = rng.uniform() < spec.flip_rate ? 1.0 - v : v;
      }
      out.labels.push_back(c);
    }
  }
  out.provenance = "synth";
  return out;
}

std::vector<std::vector<std::size_t>> batch_iter(std::size_t n, std::size_t batch_size, const RngStream& rng,
                                                 std::size_t epoch) {
  if (batch_size == 0) throw InvalidArgument("batch size must be positive");
  RngStream epoch_rng = rng.fork(epoch);
  auto order = epoch_rng.permutation(n);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < n; start += batch_size) {
    std::size_t end = std::min(n, start + batch_size);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

}  // namespace imvae::io
