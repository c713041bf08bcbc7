#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mdx/attribution.hpp"
#include "mdx/model.hpp"
#include "mdx/perturbation.hpp"
#include "mdx/tensor.hpp"

namespace mdx {

double rmse(const Tensor& a, const Tensor& b);

// Depth errors caused by perturbing the most relevant (r) and the most
// irrelevant (i) pixels, each against the unperturbed prediction.
struct DepthErrorPair {
    double relevant_err = 0.0;
    double irrelevant_err = 0.0;
};

DepthErrorPair depth_error_pair(const Model& model, const Tensor& image, const Tensor& image_rel,
                                const Tensor& image_irr);
DepthErrorPair depth_error_pair_from(const Model& model, const Tensor& base_depth, const Tensor& image_rel,
                                     const Tensor& image_irr);

// (|r| - |i|) / (|r| + |i|), and 0 when both errors vanish. Total function
// with range [-1, 1]; positive iff the relevant error dominates.
double attribution_fidelity(const DepthErrorPair& pair);
double attribution_fidelity(double relevant_err, double irrelevant_err);

struct EvalRecord {
    std::string image_id;
    std::string method;
    std::string perturbation;
    double fraction = 0.0;
    double r_err = 0.0;
    double i_err = 0.0;
    double af = 0.0;
    double fe = 0.0;
};

// Fraction of records whose relevant error strictly exceeds the irrelevant
// one; ties count against the method.
double asr(std::span<const EvalRecord> records);

double pearson(std::span<const double> xs, std::span<const double> ys);

struct FeResult {
    double value = 0.0;
    bool degenerate = false;  // zero variance in relevance or in errors
};

// Partition the full pixel ranking into `bins` contiguous groups (descending
// relevance), perturb each group alone, and correlate mean group relevance
// with the resulting depth error. bins = H*W gives the exact per-pixel mode.
FeResult faithfulness_estimate(const Model& model, const Tensor& image, const RelevanceMap& relevance,
                               const PerturbSpec& spec, int bins, std::uint64_t seed);

struct AggregateCell {
    std::string method;
    std::string perturbation;
    double fraction = 0.0;
    double mean_r_err = 0.0;
    double mean_i_err = 0.0;
    double asr = 0.0;
    double mean_fe = 0.0;
    double mean_af = 0.0;  // averaged per-image, never recomputed from mean errors
    std::int64_t count = 0;
};

// One (method, perturbation, fraction) cell; all records must belong to it.
AggregateCell aggregate_cell(std::span<const EvalRecord> records);

// Group records by cell, preserving first-appearance order.
std::vector<AggregateCell> aggregate_records(std::span<const EvalRecord> records);

// CSV with header image_id,method,perturbation,fraction,rRMSE,iRMSE,AF,FE.
std::string records_to_csv(std::span<const EvalRecord> records);
std::vector<EvalRecord> records_from_csv(const std::string& text);
// CSV with header method,perturbation,percent,rRMSE,iRMSE,ASR,FE,AF.
std::string aggregates_to_csv(std::span<const AggregateCell> cells);
std::string records_to_json(std::span<const EvalRecord> records);
std::string aggregates_to_json(std::span<const AggregateCell> cells);

}  // namespace mdx
