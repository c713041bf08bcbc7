#include "mdx/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "mdx/log.hpp"
#include "mdx/rng.hpp"

namespace mdx {

double rmse(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) {
        throw std::invalid_argument("rmse: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
    }
    if (a.size() == 0) throw std::invalid_argument("rmse: empty tensors");
    double acc = 0.0;
    for (std::int64_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        acc += d * d;
    }
    return std::sqrt(acc / static_cast<double>(a.size()));
}

DepthErrorPair depth_error_pair_from(const Model& model, const Tensor& base_depth, const Tensor& image_rel,
                                     const Tensor& image_irr) {
    DepthErrorPair pair;
    pair.relevant_err = rmse(predict(model, image_rel).depth, base_depth);
    pair.irrelevant_err = rmse(predict(model, image_irr).depth, base_depth);
    return pair;
}

DepthErrorPair depth_error_pair(const Model& model, const Tensor& image, const Tensor& image_rel,
                                const Tensor& image_irr) {
    return depth_error_pair_from(model, predict(model, image).depth, image_rel, image_irr);
}

double attribution_fidelity(double relevant_err, double irrelevant_err) {
    const double r = std::abs(relevant_err);
    const double i = std::abs(irrelevant_err);
    const double denom = r + i;
    if (denom == 0.0) return 0.0;  // neither side moved the prediction
    return (r - i) / denom;
}

double attribution_fidelity(const DepthErrorPair& pair) {
    return attribution_fidelity(pair.relevant_err, pair.irrelevant_err);
}

double asr(std::span<const EvalRecord> records) {
    if (records.empty()) throw std::invalid_argument("asr: empty record set");
    std::int64_t wins = 0;
    for (const EvalRecord& r : records)
        if (r.r_err > r.i_err) ++wins;
    return static_cast<double>(wins) / static_cast<double>(records.size());
}

double pearson(std::span<const double> xs, std::span<const double> ys) {
    if (xs.size() != ys.size() || xs.size() < 2) {
        throw std::invalid_argument("pearson: need two equally sized series of length >= 2");
    }
    const double n = static_cast<double>(xs.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        mx += xs[i];
        my += ys[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double dx = xs[i] - mx;
        const double dy = ys[i] - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if (sxx == 0.0 || syy == 0.0) return 0.0;
    return sxy / std::sqrt(sxx * syy);
}

FeResult faithfulness_estimate(const Model& model, const Tensor& image, const RelevanceMap& relevance,
                               const PerturbSpec& spec, int bins, std::uint64_t seed) {
    const std::int64_t total = relevance.scores.size();
    if (bins < 2) throw std::invalid_argument("faithfulness_estimate: bins must be >= 2");
    if (bins > total) {
        throw std::invalid_argument("faithfulness_estimate: bins " + std::to_string(bins) +
                                    " exceeds pixel count " + std::to_string(total));
    }
    validate(spec);

    const std::vector<std::int64_t> order = rank_pixels(relevance);
    const Tensor base_depth = predict(model, image).depth;
    // FGSM shares one input gradient across groups.
    Tensor grad;
    if (spec.kind == PerturbKind::kFgsm) grad = depth_mean_gradient(model, image);

    // Contiguous rank groups covering every pixel; the first (total % bins)
    // groups take one extra pixel.
    std::vector<double> group_relevance(static_cast<std::size_t>(bins));
    std::vector<double> group_error(static_cast<std::size_t>(bins));
    const std::int64_t base_size = total / bins;
    const std::int64_t remainder = total % bins;
    std::int64_t cursor = 0;
    for (int g = 0; g < bins; ++g) {
        const std::int64_t size = base_size + (g < remainder ? 1 : 0);
        PixelMask mask;
        mask.height = relevance.scores.dim(0);
        mask.width = relevance.scores.dim(1);
        mask.selected.assign(static_cast<std::size_t>(total), 0);
        mask.fraction = static_cast<double>(size) / static_cast<double>(total);
        double rel_sum = 0.0;
        for (std::int64_t i = 0; i < size; ++i) {
            const std::int64_t pix = order[static_cast<std::size_t>(cursor + i)];
            mask.selected[static_cast<std::size_t>(pix)] = 1;
            rel_sum += relevance.scores[pix];
        }
        cursor += size;

        const Tensor perturbed =
            apply_perturbation(&model, image, mask, spec, mix_seed(seed, static_cast<std::uint64_t>(g)),
                               spec.kind == PerturbKind::kFgsm ? &grad : nullptr);
        group_relevance[static_cast<std::size_t>(g)] = rel_sum / static_cast<double>(size);
        group_error[static_cast<std::size_t>(g)] = rmse(predict(model, perturbed).depth, base_depth);
    }

    FeResult result;
    double rel_min = group_relevance[0], rel_max = group_relevance[0];
    double err_min = group_error[0], err_max = group_error[0];
    for (int g = 1; g < bins; ++g) {
        rel_min = std::min(rel_min, group_relevance[static_cast<std::size_t>(g)]);
        rel_max = std::max(rel_max, group_relevance[static_cast<std::size_t>(g)]);
        err_min = std::min(err_min, group_error[static_cast<std::size_t>(g)]);
        err_max = std::max(err_max, group_error[static_cast<std::size_t>(g)]);
    }
    if (rel_min == rel_max || err_min == err_max) {
        result.degenerate = true;
        result.value = 0.0;
        log::debug("faithfulness_estimate: degenerate correlation (constant relevance or errors)");
        return result;
    }
    result.value = pearson(group_relevance, group_error);
    return result;
}

AggregateCell aggregate_cell(std::span<const EvalRecord> records) {
    if (records.empty()) throw std::invalid_argument("aggregate_cell: empty record set");
    AggregateCell cell;
    cell.method = records[0].method;
    cell.perturbation = records[0].perturbation;
    cell.fraction = records[0].fraction;
    for (const EvalRecord& r : records) {
        if (r.method != cell.method || r.perturbation != cell.perturbation || r.fraction != cell.fraction) {
            throw std::invalid_argument("aggregate_cell: records span more than one cell");
        }
        cell.mean_r_err += r.r_err;
        cell.mean_i_err += r.i_err;
        cell.mean_fe += r.fe;
        cell.mean_af += r.af;
    }
    const double n = static_cast<double>(records.size());
    cell.mean_r_err /= n;
    cell.mean_i_err /= n;
    cell.mean_fe /= n;
    cell.mean_af /= n;
    cell.asr = asr(records);
    cell.count = static_cast<std::int64_t>(records.size());
    return cell;
}

std::vector<AggregateCell> aggregate_records(std::span<const EvalRecord> records) {
    std::vector<std::string> keys;
    std::vector<std::vector<EvalRecord>> groups;
    for (const EvalRecord& r : records) {
        const std::string key = r.method + "|" + r.perturbation + "|" + std::to_string(r.fraction);
        auto it = std::find(keys.begin(), keys.end(), key);
        if (it == keys.end()) {
            keys.push_back(key);
            groups.emplace_back();
            groups.back().push_back(r);
        } else {
            groups[static_cast<std::size_t>(it - keys.begin())].push_back(r);
        }
    }
    std::vector<AggregateCell> cells;
    cells.reserve(groups.size());
    for (const auto& g : groups) cells.push_back(aggregate_cell(g));
    return cells;
}

namespace {

std::string fmt_full(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string fmt_short(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

}  // namespace

std::string records_to_csv(std::span<const EvalRecord> records) {
    std::string out = "image_id,method,perturbation,fraction,rRMSE,iRMSE,AF,FE\n";
    for (const EvalRecord& r : records) {
        out += r.image_id + "," + r.method + "," + r.perturbation + "," + fmt_full(r.fraction) + "," +
               fmt_full(r.r_err) + "," + fmt_full(r.i_err) + "," + fmt_full(r.af) + "," + fmt_full(r.fe) +
               "\n";
    }
    return out;
}

std::vector<EvalRecord> records_from_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("records csv: empty input");
    if (line != "image_id,method,perturbation,fraction,rRMSE,iRMSE,AF,FE") {
        throw std::runtime_error("records csv: unexpected header '" + line + "'");
    }
    std::vector<EvalRecord> records;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string field;
        EvalRecord r;
        std::getline(ls, r.image_id, ',');
        std::getline(ls, r.method, ',');
        std::getline(ls, r.perturbation, ',');
        std::getline(ls, field, ',');
        r.fraction = std::stod(field);
        std::getline(ls, field, ',');
        r.r_err = std::stod(field);
        std::getline(ls, field, ',');
        r.i_err = std::stod(field);
        std::getline(ls, field, ',');
        r.af = std::stod(field);
        std::getline(ls, field, ',');
        r.fe = std::stod(field);
        records.push_back(std::move(r));
    }
    return records;
}

std::string aggregates_to_csv(std::span<const AggregateCell> cells) {
    std::string out = "method,perturbation,percent,rRMSE,iRMSE,ASR,FE,AF\n";
    for (const AggregateCell& c : cells) {
        out += c.method + "," + c.perturbation + "," + fmt_short(c.fraction * 100.0) + "," +
               fmt_short(c.mean_r_err) + "," + fmt_short(c.mean_i_err) + "," + fmt_short(c.asr) + "," +
               fmt_short(c.mean_fe) + "," + fmt_short(c.mean_af) + "\n";
    }
    return out;
}

std::string records_to_json(std::span<const EvalRecord> records) {
    nlohmann::json arr = nlohmann::json::array();
    for (const EvalRecord& r : records) {
        arr.push_back({{"image_id", r.image_id},
                       {"method", r.method},
                       {"perturbation", r.perturbation},
                       {"fraction", r.fraction},
                       {"rRMSE", r.r_err},
                       {"iRMSE", r.i_err},
                       {"AF", r.af},
                       {"FE", r.fe}});
    }
    return arr.dump(2) + "\n";
}

std::string aggregates_to_json(std::span<const AggregateCell> cells) {
    nlohmann::json arr = nlohmann::json::array();
    for (const AggregateCell& c : cells) {
        arr.push_back({{"method", c.method},
                       {"perturbation", c.perturbation},
                       {"percent", c.fraction * 100.0},
                       {"rRMSE", c.mean_r_err},
                       {"iRMSE", c.mean_i_err},
                       {"ASR", c.asr},
                       {"FE", c.mean_fe},
                       {"AF", c.mean_af},
                       {"count", c.count}});
    }
    return arr.dump(2) + "\n";
}

}  // namespace mdx
