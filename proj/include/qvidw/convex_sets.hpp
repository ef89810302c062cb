#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "qvidw/common.hpp"

namespace qvidw {

// Canonical closed convex sets with exact projections.  These are the only
// building blocks allowed for the "easy" part of a feasible set; anything
// that would need an iterative projection is out of scope by design, so the
// projection routines below are all finite formulas.
enum class SetKind { AllSpace, NonnegOrthant, Box, Simplex, BallNonneg };

class ConvexSet {
 public:
  static ConvexSet all_space(Index dim);
  static ConvexSet nonneg_orthant(Index dim);
  // lower <= upper componentwise; +/-inf entries are allowed.
  static ConvexSet box(Vector lower, Vector upper);
  // Unit simplex {v >= 0, sum v = 1}.
  static ConvexSet simplex(Index dim);
  // {v >= 0, ||v||^2 <= radius_sq}, radius_sq > 0.
  static ConvexSet ball_nonneg(Index dim, double radius_sq);

  SetKind kind() const { return kind_; }
  Index dim() const { return dim_; }
  double radius_sq() const;
  const Vector& lower() const;
  const Vector& upper() const;

  Vector project(const Vector& v) const;
  bool contains(const Vector& v, double tol) const;

  // One element of the B-subdifferential of the projection map at v.
  // Used by the KKT-system solver; piecewise structure is resolved at v
  // itself (ties go to the smooth piece that project() lands on).
  Matrix projection_jacobian(const Vector& v) const;

  std::string describe() const;

  bool operator==(const ConvexSet& other) const;

 private:
  ConvexSet(SetKind kind, Index dim) : kind_(kind), dim_(dim) {}

  SetKind kind_;
  Index dim_;
  Vector lower_, upper_;    // Box
  double radius_sq_ = 0.0;  // BallNonneg
};

// Cartesian product of canonical blocks.  Projection and membership act
// blockwise; offsets index the concatenated coordinates.
class ProductSet {
 public:
  ProductSet() = default;
  explicit ProductSet(std::vector<ConvexSet> blocks);

  Index dim() const { return dim_; }
  std::size_t block_count() const { return blocks_.size(); }
  const ConvexSet& block(std::size_t a) const { return blocks_[a]; }
  Index offset(std::size_t a) const { return offsets_[a]; }

  Vector project(const Vector& v) const;
  bool contains(const Vector& v, double tol) const;
  Matrix projection_jacobian(const Vector& v) const;

  // Product of the blocks [first, last), as a standalone set over the
  // corresponding coordinate span.
  ProductSet slice(std::size_t first, std::size_t last) const;

  bool operator==(const ProductSet& other) const;

 private:
  std::vector<ConvexSet> blocks_;
  std::vector<Index> offsets_;
  Index dim_ = 0;
};

}  // namespace qvidw
