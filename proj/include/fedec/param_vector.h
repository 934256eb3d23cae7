#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace fedec {

class LayoutMismatch : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct LayerShape {
  std::string name;
  std::vector<std::size_t> dims;

  std::size_t size() const;
  bool operator==(const LayerShape&) const = default;
};

using Layout = std::vector<LayerShape>;

std::size_t layout_size(const Layout& layout);

/// Flat model parameters together with the per-layer layout that slices them.
///
/// Arithmetic between two vectors requires identical layouts; anything else
/// throws LayoutMismatch. The same type carries the meta-initialization, a
/// client's adapted model, stored historical models and update directions.
class ParamVector {
 public:
  ParamVector() = default;
  explicit ParamVector(Layout layout);
  ParamVector(Layout layout, std::vector<double> values);

  const Layout& layout() const { return layout_; }
  std::size_t size() const { return values_.size(); }
  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }

  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  /// Offset of the named layer into the flat vector.
  std::size_t offset_of(const std::string& layer) const;
  std::span<const double> slice(const std::string& layer) const;
  std::span<double> slice(const std::string& layer);

  ParamVector& operator+=(const ParamVector& other);
  ParamVector& operator-=(const ParamVector& other);
  ParamVector& operator*=(double s);

  /// this += s * other
  ParamVector& axpy(double s, const ParamVector& other);

  double squared_norm() const;

  void check_same_layout(const ParamVector& other) const;

  // Bit-level equality (NaN payloads and signed zeros included).
  bool bit_equal(const ParamVector& other) const;
  bool operator==(const ParamVector& other) const = default;

 private:
  Layout layout_;
  std::vector<double> values_;
};

ParamVector operator+(ParamVector a, const ParamVector& b);
ParamVector operator-(ParamVector a, const ParamVector& b);
ParamVector operator*(double s, ParamVector a);

// Checkpoint text format:
//   fedec-params <name>:<d0>x<d1> <name>:<d0> ...
//   <value>            (one per line, shortest round-trip decimal)
void write_checkpoint(std::ostream& out, const ParamVector& params);
ParamVector read_checkpoint(std::istream& in);
void save_checkpoint(const std::filesystem::path& path, const ParamVector& params);
ParamVector load_checkpoint(const std::filesystem::path& path);

// Shortest decimal text that parses back to exactly the same double.
std::string format_double(double v);
double parse_double(std::string_view text);

}  // namespace fedec
