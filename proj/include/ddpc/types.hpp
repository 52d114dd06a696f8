#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace ddpc {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

using Index = Eigen::Index;

/// Thrown when inputs violate a documented precondition (dimension
/// mismatches, malformed horizons, invalid configuration values).
class ContractError : public std::invalid_argument {
public:
    explicit ContractError(const std::string& msg) : std::invalid_argument(msg) {}
};

namespace detail {

inline void require(bool cond, const std::string& msg)
{
    if (!cond)
        throw ContractError(msg);
}

} // namespace detail

} // namespace ddpc
