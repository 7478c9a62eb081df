#pragma once

// JSON form of HmmParams: {"n":…, "m":…, "T":…, "pi":[…], "A":[[…]], "B":[[…]]}, row-major.

#include <nlohmann/json.hpp>

#include "ohmm/error.hpp"
#include "ohmm/hmm.hpp"

namespace ohmm {

namespace detail {

template <typename Scalar>
nlohmann::json rows_to_json(const Matrix<Scalar>& M) {
  auto out = nlohmann::json::array();
  for (Eigen::Index i = 0; i < M.rows(); ++i) {
    auto row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < M.cols(); ++j) row.push_back(static_cast<double>(M(i, j)));
    out.push_back(std::move(row));
  }
  return out;
}

template <typename Scalar>
Matrix<Scalar> rows_from_json(const nlohmann::json& j, int rows, int cols, const char* key) {
  if (!j.is_array() || static_cast<int>(j.size()) != rows) {
    throw DimensionError(std::string("\"") + key + "\" must have " + std::to_string(rows) + " rows");
  }
  Matrix<Scalar> M(rows, cols);
  for (int i = 0; i < rows; ++i) {
    const auto& row = j[i];
    if (!row.is_array() || static_cast<int>(row.size()) != cols) {
      throw DimensionError(std::string("\"") + key + "\" row " + std::to_string(i) + " must have " +
                           std::to_string(cols) + " entries");
    }
    for (int c = 0; c < cols; ++c) M(i, c) = static_cast<Scalar>(row[c].get<double>());
  }
  return M;
}

}  // namespace detail

template <typename Scalar>
nlohmann::json to_json(const HmmParams<Scalar>& h) {
  nlohmann::json j;
  j["n"] = h.dims.n;
  j["m"] = h.dims.m;
  j["T"] = h.dims.T;
  auto pi = nlohmann::json::array();
  for (Eigen::Index i = 0; i < h.pi.size(); ++i) pi.push_back(static_cast<double>(h.pi(i)));
  j["pi"] = std::move(pi);
  j["A"] = detail::rows_to_json(h.A);
  j["B"] = detail::rows_to_json(h.B);
  return j;
}

/// Parses and shape-checks; stochasticity is left to validate().
template <typename Scalar = double>
HmmParams<Scalar> hmm_from_json(const nlohmann::json& j) {
  try {
    HmmParams<Scalar> h;
    h.dims = {j.at("n").get<int>(), j.at("m").get<int>(), j.at("T").get<int>()};
    h.dims.check();
    const auto& pi = j.at("pi");
    if (!pi.is_array() || static_cast<int>(pi.size()) != h.dims.n) throw DimensionError("\"pi\" must have n entries");
    h.pi.resize(h.dims.n);
    for (int i = 0; i < h.dims.n; ++i) h.pi(i) = static_cast<Scalar>(pi[i].get<double>());
    h.A = detail::rows_from_json<Scalar>(j.at("A"), h.dims.n, h.dims.n, "A");
    h.B = detail::rows_from_json<Scalar>(j.at("B"), h.dims.n, h.dims.m, "B");
    return h;
  } catch (const nlohmann::json::exception& e) {
    throw DimensionError(std::string("malformed HMM JSON: ") + e.what());
  }
}

}  // namespace ohmm
