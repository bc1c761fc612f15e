#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace colnode {

using Scalar = double;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

/// Base class of every error raised by the library.
class Error : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error
{
public:
  using Error::Error;
};

/// Two or more collocation nodes coincide.
class DegenerateGrid : public Error
{
public:
  using Error::Error;
};

/// Time interval with t_end <= t0.
class InvalidInterval : public Error
{
public:
  using Error::Error;
};

class IoError : public Error
{
public:
  using Error::Error;
};

namespace detail {

inline void require(bool cond, const std::string & msg)
{
  if (!cond) { throw InvalidArgument(msg); }
}

}  // namespace detail

}  // namespace colnode
