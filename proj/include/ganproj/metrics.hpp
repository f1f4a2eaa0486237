#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ganproj/weights_io.hpp"

namespace ganproj {

/// PSNR of identical images.
inline constexpr double kPsnrInfinity = std::numeric_limits<double>::infinity();

/// Mean over all pixel-channel values of the squared 8-bit difference.
double mse_pixels(const Image& a, const Image& b);

/// 10 log10(255^2 / mse) over all channels jointly; kPsnrInfinity when mse == 0.
double psnr(const Image& a, const Image& b);
double psnr_from_mse(double mse);

/// Shortest round-trip decimal, or "inf".
std::string format_number(double v);

struct EvalRecord {
    std::size_t image_id = 0;
    double sigma = 0.0;
    std::string method;
    double mse = 0.0;
    double psnr_db = 0.0;
};

/// Outputs of one method, aligned with the clean images.
struct Candidate {
    std::string method;
    std::vector<Image> images;
};

struct SummaryRow {
    std::string method;
    double sigma = 0.0;
    double mean_psnr = 0.0;
    /// Sample standard deviation; 0 for a single value.
    double std_psnr = 0.0;
    std::size_t n = 0;
};

struct EvalReport {
    /// Sorted by (image_id, method).
    std::vector<EvalRecord> records;
    /// Sorted by (method, sigma).
    std::vector<SummaryRow> summary;
};

/// sigmas[i] is the noise level of clean[i]. Records parallelize over jobs.
EvalReport batch_eval(const std::vector<Image>& clean, const std::vector<Candidate>& candidates,
                      const std::vector<double>& sigmas, unsigned jobs = 0);

/// Header "image_id,sigma,method,mse,psnr_db".
std::string records_csv(const std::vector<EvalRecord>& records);
/// {"method": {"sigma": {"mean_psnr": ..., "std_psnr": ..., "n": ...}}}; infinities as "inf".
nlohmann::json summary_json(const std::vector<SummaryRow>& summary);

}  // namespace ganproj
