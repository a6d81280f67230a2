#pragma once

#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace evanflow {

std::string trim(std::string_view s);
std::vector<std::string> split(std::string_view s, char sep);

/// Parses a full-string double; throws InputError naming `what` otherwise.
double parse_double(std::string_view s, std::string_view what);
Eigen::VectorXd parse_vector(std::string_view csv, std::string_view what);

/// %.17g, the round-trip format used in every CSV the library writes.
std::string format_real(double x);
std::string format_point(const Eigen::VectorXd& x);

}  // namespace evanflow
