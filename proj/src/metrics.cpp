#include "ganproj/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>

#include "ganproj/error.hpp"
#include "ganproj/parallel.hpp"

namespace ganproj {

double mse_pixels(const Image& a, const Image& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError("image shapes differ: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
    }
    if (a.size() == 0) throw ShapeError("mse_pixels: empty images");
    const auto pa = a.pixels(), pb = b.pixels();
    // Exact in integers, then one division.
    std::uint64_t sum = 0;
    for (std::size_t i = 0; i < pa.size(); ++i) {
        const int d = static_cast<int>(pa[i]) - static_cast<int>(pb[i]);
        sum += static_cast<std::uint64_t>(d * d);
    }
    return static_cast<double>(sum) / static_cast<double>(pa.size());
}

double psnr_from_mse(double mse) {
    if (mse < 0 || std::isnan(mse)) throw NumericError("mse must be nonnegative");
    if (mse == 0) return kPsnrInfinity;
    return 10.0 * std::log10(255.0 * 255.0 / mse);
}

double psnr(const Image& a, const Image& b) { return psnr_from_mse(mse_pixels(a, b)); }

std::string format_number(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    if (std::isnan(v)) return "nan";
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

EvalReport batch_eval(const std::vector<Image>& clean, const std::vector<Candidate>& candidates,
                      const std::vector<double>& sigmas, unsigned jobs) {
    if (sigmas.size() != clean.size()) {
        throw ShapeError("batch_eval: " + std::to_string(sigmas.size()) + " sigmas for " +
                         std::to_string(clean.size()) + " images");
    }
    for (const auto& c : candidates) {
        if (c.images.size() != clean.size()) {
            throw ShapeError("batch_eval: method '" + c.method + "' has " + std::to_string(c.images.size()) +
                             " images, expected " + std::to_string(clean.size()));
        }
    }
    // Method order for the (image_id, method) sort.
    std::vector<std::size_t> order(candidates.size());
    for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t x, std::size_t y) { return candidates[x].method < candidates[y].method; });

    const std::size_t m = candidates.size();
    EvalReport report;
    report.records.resize(clean.size() * m);
    parallel_for(report.records.size(), jobs, [&](std::size_t r) {
        const std::size_t i = r / m;
        const Candidate& c = candidates[order[r % m]];
        const double mse = mse_pixels(clean[i], c.images[i]);
        report.records[r] = {i, sigmas[i], c.method, mse, psnr_from_mse(mse)};
    });

    std::map<std::pair<std::string, double>, std::vector<double>> groups;
    for (const auto& rec : report.records) groups[{rec.method, rec.sigma}].push_back(rec.psnr_db);
    for (const auto& [key, values] : groups) {
        SummaryRow row{key.first, key.second, 0.0, 0.0, values.size()};
        const bool any_inf = std::any_of(values.begin(), values.end(), [](double v) { return std::isinf(v); });
        const bool all_equal = std::all_of(values.begin(), values.end(), [&](double v) { return v == values[0]; });
        if (any_inf) {
            row.mean_psnr = kPsnrInfinity;
            row.std_psnr = all_equal ? 0.0 : kPsnrInfinity;
        } else {
            double sum = 0.0;
            for (double v : values) sum += v;
            row.mean_psnr = sum / static_cast<double>(values.size());
            if (values.size() > 1 && !all_equal) {
                double ss = 0.0;
                for (double v : values) ss += (v - row.mean_psnr) * (v - row.mean_psnr);
                row.std_psnr = std::sqrt(ss / static_cast<double>(values.size() - 1));
            }
        }
        report.summary.push_back(row);
    }
    return report;
}

std::string records_csv(const std::vector<EvalRecord>& records) {
    std::string out = "image_id,sigma,method,mse,psnr_db\n";
    for (const auto& r : records) {
        out += std::to_string(r.image_id) + "," + format_number(r.sigma) + "," + r.method + "," +
               format_number(r.mse) + "," + format_number(r.psnr_db) + "\n";
    }
    return out;
}

nlohmann::json summary_json(const std::vector<SummaryRow>& summary) {
    auto num = [](double v) -> nlohmann::json {
        if (std::isinf(v)) return format_number(v);
        return v;
    };
    nlohmann::json out = nlohmann::json::object();
    for (const auto& row : summary) {
        out[row.method][format_number(row.sigma)] = {
            {"mean_psnr", num(row.mean_psnr)}, {"std_psnr", num(row.std_psnr)}, {"n", row.n}};
    }
    return out;
}

}  // namespace ganproj
