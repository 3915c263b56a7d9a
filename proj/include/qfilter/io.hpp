#pragma once

// Serialization: operators and reports as JSON, scalar series as CSV,
// density trajectories as JSONL.

#include <string>
#include <vector>

#include "json.hpp"

#include "qfilter/gaussian_oracle.hpp"
#include "qfilter/mixed_filter.hpp"
#include "qfilter/operator_lab.hpp"
#include "qfilter/pure_filter.hpp"

namespace qfilter::io {

using nlohmann::json;

// {dim, re: [[...]], im: [[...]], hermitian, band_width (null when absent)}
json to_json(const TruncatedOperator& op);
TruncatedOperator operator_from_json(const json& j);

json to_json(const DissipativityReport& r);
json to_json(const MartingaleReport& r);
json to_json(const TraceMartingaleReport& r);
json to_json(const ConvergenceTable& t);
json to_json(const SensitivityReport& r);
json to_json(const CoefficientStats& s);
json to_json(const MomentEstimate& m);
json to_json(const GaussianKernelState& s);

// Columns t, re0, im0, re1, im1, ..., norm_sq; every `stride`-th record.
std::string pure_csv(const PureTrajectory& traj, int stride = 1);
// One object per record: {t, re, im (row-major upper triangle), trace, min_eig}.
std::string density_jsonl(const DensityTrajectory& traj);
// Columns p, t, N, estimator, estimate, stderr, diverging.
std::string moments_csv(const std::vector<MomentEstimate>& rows);

// Writes text and returns the byte length; throws Error("io", ...) on failure.
std::size_t write_file(const std::string& path, const std::string& content);
std::string read_file(const std::string& path);

}  // namespace qfilter::io
