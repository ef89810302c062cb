#include "qvidw/convex_sets.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace qvidw {

namespace {

void check_dim(const ConvexSet& s, const Vector& v, const char* op) {
  if (v.size() != s.dim()) {
    std::ostringstream msg;
    msg << op << ": vector has dimension " << v.size() << ", set has "
        << s.dim();
    throw std::invalid_argument(msg.str());
  }
}

// Projection onto the unit simplex by sort and threshold
// (Held/Wolfe/Crowder; see also Duchi et al. 2008).  O(d log d).
Vector project_simplex(const Vector& v) {
  const Index d = v.size();
  std::vector<double> u(v.data(), v.data() + d);
  std::sort(u.begin(), u.end(), std::greater<double>());
  double cumsum = 0.0;
  double theta = 0.0;
  int support = 0;
  for (Index j = 0; j < d; ++j) {
    cumsum += u[j];
    const double t = (cumsum - 1.0) / static_cast<double>(j + 1);
    if (u[j] - t > 0.0) {
      theta = t;
      support = static_cast<int>(j + 1);
    }
  }
  (void)support;
  Vector w(d);
  for (Index i = 0; i < d; ++i) w[i] = std::max(v[i] - theta, 0.0);
  return w;
}

}  // namespace

ConvexSet ConvexSet::all_space(Index dim) {
  if (dim <= 0) throw std::invalid_argument("all_space: dim must be positive");
  return ConvexSet(SetKind::AllSpace, dim);
}

ConvexSet ConvexSet::nonneg_orthant(Index dim) {
  if (dim <= 0)
    throw std::invalid_argument("nonneg_orthant: dim must be positive");
  return ConvexSet(SetKind::NonnegOrthant, dim);
}

ConvexSet ConvexSet::box(Vector lower, Vector upper) {
  if (lower.size() != upper.size() || lower.size() == 0)
    throw std::invalid_argument("box: bound dimensions do not match");
  for (Index i = 0; i < lower.size(); ++i) {
    if (!(lower[i] <= upper[i]))
      throw std::invalid_argument("box: requires lower <= upper");
  }
  ConvexSet s(SetKind::Box, lower.size());
  s.lower_ = std::move(lower);
  s.upper_ = std::move(upper);
  return s;
}

ConvexSet ConvexSet::simplex(Index dim) {
  if (dim <= 0) throw std::invalid_argument("simplex: dim must be positive");
  return ConvexSet(SetKind::Simplex, dim);
}

ConvexSet ConvexSet::ball_nonneg(Index dim, double radius_sq) {
  if (dim <= 0)
    throw std::invalid_argument("ball_nonneg: dim must be positive");
  if (!(radius_sq > 0.0))
    throw std::invalid_argument("ball_nonneg: radius_sq must be positive");
  ConvexSet s(SetKind::BallNonneg, dim);
  s.radius_sq_ = radius_sq;
  return s;
}

double ConvexSet::radius_sq() const {
  if (kind_ != SetKind::BallNonneg)
    throw std::logic_error("radius_sq: set is not a BallNonneg");
  return radius_sq_;
}

const Vector& ConvexSet::lower() const {
  if (kind_ != SetKind::Box) throw std::logic_error("lower: set is not a Box");
  return lower_;
}

const Vector& ConvexSet::upper() const {
  if (kind_ != SetKind::Box) throw std::logic_error("upper: set is not a Box");
  return upper_;
}

Vector ConvexSet::project(const Vector& v) const {
  check_dim(*this, v, "project");
  switch (kind_) {
    case SetKind::AllSpace:
      return v;
    case SetKind::NonnegOrthant:
      return v.cwiseMax(0.0);
    case SetKind::Box:
      return v.cwiseMax(lower_).cwiseMin(upper_);
    case SetKind::Simplex:
      return project_simplex(v);
    case SetKind::BallNonneg: {
      // Clamp to the orthant, then scale radially.  The composition is the
      // exact projection because the orthant is a cone and the ball is
      // centered: normals of the two pieces add up along the composite point.
      Vector w = v.cwiseMax(0.0);
      const double nsq = w.squaredNorm();
      if (nsq > radius_sq_) w *= std::sqrt(radius_sq_ / nsq);
      return w;
    }
  }
  throw std::logic_error("project: unreachable");
}

bool ConvexSet::contains(const Vector& v, double tol) const {
  check_dim(*this, v, "contains");
  switch (kind_) {
    case SetKind::AllSpace:
      return true;
    case SetKind::NonnegOrthant:
      return (v.array() >= -tol).all();
    case SetKind::Box:
      return (v.array() >= lower_.array() - tol).all() &&
             (v.array() <= upper_.array() + tol).all();
    case SetKind::Simplex:
      return (v.array() >= -tol).all() && std::abs(v.sum() - 1.0) <= tol;
    case SetKind::BallNonneg:
      return (v.array() >= -tol).all() && v.squaredNorm() <= radius_sq_ + tol;
  }
  throw std::logic_error("contains: unreachable");
}

Matrix ConvexSet::projection_jacobian(const Vector& v) const {
  check_dim(*this, v, "projection_jacobian");
  const Index d = dim_;
  switch (kind_) {
    case SetKind::AllSpace:
      return Matrix::Identity(d, d);
    case SetKind::NonnegOrthant: {
      Matrix J = Matrix::Zero(d, d);
      for (Index i = 0; i < d; ++i)
        if (v[i] > 0.0) J(i, i) = 1.0;
      return J;
    }
    case SetKind::Box: {
      Matrix J = Matrix::Zero(d, d);
      for (Index i = 0; i < d; ++i)
        if (v[i] > lower_[i] && v[i] < upper_[i]) J(i, i) = 1.0;
      return J;
    }
    case SetKind::Simplex: {
      // Free coordinates are those above the threshold; on them the map is
      // the centered projection I - (1/|F|) 11^T.
      const Vector w = project_simplex(v);
      std::vector<Index> free;
      for (Index i = 0; i < d; ++i)
        if (w[i] > 0.0) free.push_back(i);
      Matrix J = Matrix::Zero(d, d);
      const double f = static_cast<double>(free.size());
      for (Index a : free)
        for (Index b : free) J(a, b) = (a == b ? 1.0 : 0.0) - 1.0 / f;
      return J;
    }
    case SetKind::BallNonneg: {
      Vector w = v.cwiseMax(0.0);
      Matrix D = Matrix::Zero(d, d);
      for (Index i = 0; i < d; ++i)
        if (v[i] > 0.0) D(i, i) = 1.0;
      const double nsq = w.squaredNorm();
      if (nsq <= radius_sq_) return D;
      const double nrm = std::sqrt(nsq);
      const Vector wh = w / nrm;
      Matrix S = (std::sqrt(radius_sq_) / nrm) *
                 (Matrix::Identity(d, d) - wh * wh.transpose());
      return S * D;
    }
  }
  throw std::logic_error("projection_jacobian: unreachable");
}

std::string ConvexSet::describe() const {
  std::ostringstream os;
  switch (kind_) {
    case SetKind::AllSpace:
      os << "all_space(" << dim_ << ")";
      break;
    case SetKind::NonnegOrthant:
      os << "nonneg_orthant(" << dim_ << ")";
      break;
    case SetKind::Box:
      os << "box(" << dim_ << ")";
      break;
    case SetKind::Simplex:
      os << "simplex(" << dim_ << ")";
      break;
    case SetKind::BallNonneg:
      os << "ball_nonneg(" << dim_ << ", r2=" << radius_sq_ << ")";
      break;
  }
  return os.str();
}

bool ConvexSet::operator==(const ConvexSet& other) const {
  if (kind_ != other.kind_ || dim_ != other.dim_) return false;
  switch (kind_) {
    case SetKind::Box:
      return lower_ == other.lower_ && upper_ == other.upper_;
    case SetKind::BallNonneg:
      return radius_sq_ == other.radius_sq_;
    default:
      return true;
  }
}

ProductSet::ProductSet(std::vector<ConvexSet> blocks)
    : blocks_(std::move(blocks)) {
  if (blocks_.empty())
    throw std::invalid_argument("ProductSet: needs at least one block");
  offsets_.reserve(blocks_.size());
  Index off = 0;
  for (const ConvexSet& b : blocks_) {
    offsets_.push_back(off);
    off += b.dim();
  }
  dim_ = off;
}

Vector ProductSet::project(const Vector& v) const {
  if (v.size() != dim_)
    throw std::invalid_argument("ProductSet::project: dimension mismatch");
  Vector out(dim_);
  for (std::size_t a = 0; a < blocks_.size(); ++a) {
    out.segment(offsets_[a], blocks_[a].dim()) =
        blocks_[a].project(v.segment(offsets_[a], blocks_[a].dim()));
  }
  return out;
}

bool ProductSet::contains(const Vector& v, double tol) const {
  if (v.size() != dim_)
    throw std::invalid_argument("ProductSet::contains: dimension mismatch");
  for (std::size_t a = 0; a < blocks_.size(); ++a) {
    if (!blocks_[a].contains(v.segment(offsets_[a], blocks_[a].dim()), tol))
      return false;
  }
  return true;
}

Matrix ProductSet::projection_jacobian(const Vector& v) const {
  if (v.size() != dim_)
    throw std::invalid_argument(
        "ProductSet::projection_jacobian: dimension mismatch");
  Matrix J = Matrix::Zero(dim_, dim_);
  for (std::size_t a = 0; a < blocks_.size(); ++a) {
    const Index o = offsets_[a];
    const Index d = blocks_[a].dim();
    J.block(o, o, d, d) = blocks_[a].projection_jacobian(v.segment(o, d));
  }
  return J;
}

ProductSet ProductSet::slice(std::size_t first, std::size_t last) const {
  if (first >= last || last > blocks_.size())
    throw std::invalid_argument("ProductSet::slice: bad block range");
  return ProductSet(
      std::vector<ConvexSet>(blocks_.begin() + first, blocks_.begin() + last));
}

bool ProductSet::operator==(const ProductSet& other) const {
  return blocks_ == other.blocks_;
}

}  // namespace qvidw
