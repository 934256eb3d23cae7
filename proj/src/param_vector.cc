#include "fedec/param_vector.h"

#include <array>
#include <charconv>
#include <cstring>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

namespace fedec {

namespace {
constexpr const char* kCheckpointMagic = "fedec-params";
}  // namespace

std::size_t LayerShape::size() const {
  return std::accumulate(dims.begin(), dims.end(), std::size_t{1},
                         std::multiplies<>());
}

std::size_t layout_size(const Layout& layout) {
  std::size_t n = 0;
  for (const auto& l : layout) n += l.size();
  return n;
}

ParamVector::ParamVector(Layout layout)
    : layout_(std::move(layout)), values_(layout_size(layout_), 0.0) {}

ParamVector::ParamVector(Layout layout, std::vector<double> values)
    : layout_(std::move(layout)), values_(std::move(values)) {
  if (values_.size() != layout_size(layout_)) {
    throw LayoutMismatch("parameter count " + std::to_string(values_.size()) +
                         " does not match layout size " +
                         std::to_string(layout_size(layout_)));
  }
}

std::size_t ParamVector::offset_of(const std::string& layer) const {
  std::size_t off = 0;
  for (const auto& l : layout_) {
    if (l.name == layer) return off;
    off += l.size();
  }
  throw LayoutMismatch("no layer named '" + layer + "'");
}

std::span<const double> ParamVector::slice(const std::string& layer) const {
  std::size_t off = 0;
  for (const auto& l : layout_) {
    if (l.name == layer) return std::span<const double>(values_).subspan(off, l.size());
    off += l.size();
  }
  throw LayoutMismatch("no layer named '" + layer + "'");
}

std::span<double> ParamVector::slice(const std::string& layer) {
  std::size_t off = 0;
  for (const auto& l : layout_) {
    if (l.name == layer) return std::span<double>(values_).subspan(off, l.size());
    off += l.size();
  }
  throw LayoutMismatch("no layer named '" + layer + "'");
}

void ParamVector::check_same_layout(const ParamVector& other) const {
  if (layout_ != other.layout_) {
    throw LayoutMismatch("parameter layouts differ");
  }
}

ParamVector& ParamVector::operator+=(const ParamVector& other) {
  check_same_layout(other);
  for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += other.values_[i];
  return *this;
}

ParamVector& ParamVector::operator-=(const ParamVector& other) {
  check_same_layout(other);
  for (std::size_t i = 0; i < values_.size(); ++i) values_[i] -= other.values_[i];
  return *this;
}

ParamVector& ParamVector::operator*=(double s) {
  for (auto& v : values_) v *= s;
  return *this;
}

ParamVector& ParamVector::axpy(double s, const ParamVector& other) {
  check_same_layout(other);
  for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += s * other.values_[i];
  return *this;
}

double ParamVector::squared_norm() const {
  double s = 0.0;
  for (double v : values_) s += v * v;
  return s;
}

bool ParamVector::bit_equal(const ParamVector& other) const {
  return layout_ == other.layout_ && values_.size() == other.values_.size() &&
         (values_.empty() ||
          std::memcmp(values_.data(), other.values_.data(),
                      values_.size() * sizeof(double)) == 0);
}

ParamVector operator+(ParamVector a, const ParamVector& b) { return a += b; }
ParamVector operator-(ParamVector a, const ParamVector& b) { return a -= b; }
ParamVector operator*(double s, ParamVector a) { return a *= s; }

std::string format_double(double v) {
  std::array<char, 64> buf{};
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  if (ec != std::errc()) throw std::runtime_error("cannot format double");
  return std::string(buf.data(), end);
}

double parse_double(std::string_view text) {
  // from_chars rejects a leading '+', which hand-edited files may contain.
  if (!text.empty() && text.front() == '+') text.remove_prefix(1);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size() || text.empty()) {
    throw std::invalid_argument("not a number: '" + std::string(text) + "'");
  }
  return v;
}

void write_checkpoint(std::ostream& out, const ParamVector& params) {
  out << kCheckpointMagic;
  for (const auto& l : params.layout()) {
    out << ' ' << l.name << ':';
    for (std::size_t d = 0; d < l.dims.size(); ++d) {
      if (d) out << 'x';
      out << l.dims[d];
    }
  }
  out << '\n';
  for (double v : params.values()) out << format_double(v) << '\n';
}

ParamVector read_checkpoint(std::istream& in) {
  std::string header;
  if (!std::getline(in, header)) throw std::runtime_error("empty checkpoint");
  std::istringstream hs(header);
  std::string magic;
  hs >> magic;
  if (magic != kCheckpointMagic) {
    throw std::runtime_error("not a parameter checkpoint (bad header)");
  }
  Layout layout;
  std::string rec;
  while (hs >> rec) {
    auto colon = rec.rfind(':');
    if (colon == std::string::npos || colon == 0 || colon + 1 == rec.size()) {
      throw std::runtime_error("malformed layout record '" + rec + "'");
    }
    LayerShape shape{rec.substr(0, colon), {}};
    std::string_view dims(rec);
    dims.remove_prefix(colon + 1);
    while (!dims.empty()) {
      auto x = dims.find('x');
      auto tok = dims.substr(0, x);
      std::size_t d = 0;
      auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), d);
      if (ec != std::errc() || ptr != tok.data() + tok.size() || d == 0) {
        throw std::runtime_error("malformed layout record '" + rec + "'");
      }
      shape.dims.push_back(d);
      if (x == std::string_view::npos) break;
      dims.remove_prefix(x + 1);
    }
    layout.push_back(std::move(shape));
  }
  const std::size_t n = layout_size(layout);
  std::vector<double> values;
  values.reserve(n);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (values.size() == n) throw std::runtime_error("checkpoint has extra values");
    values.push_back(parse_double(line));
  }
  if (values.size() != n) {
    throw std::runtime_error("checkpoint has " + std::to_string(values.size()) +
                             " values, layout expects " + std::to_string(n));
  }
  return ParamVector(std::move(layout), std::move(values));
}

void save_checkpoint(const std::filesystem::path& path, const ParamVector& params) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  write_checkpoint(out, params);
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

ParamVector load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return read_checkpoint(in);
}

}  // namespace fedec
