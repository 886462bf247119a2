/*
 * Copyright 2026 The decaf authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License"). You may not use this file except in compliance
 * with the License. A copy of the License is located at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * or in the "license" file accompanying this file. This file is distributed on an "AS IS" BASIS, WITHOUT WARRANTIES
 * OR CONDITIONS OF ANY KIND, either express or implied. See the License for the specific language governing permissions
 * and limitations under the License.
 */

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <unordered_set>
#include <vector>

#include "decaf/corpus.hpp"
#include "decaf/inference.hpp"
#include "decaf/model.hpp"

namespace decaf {

struct MetricOptions {
    /// Keep the 1/k prefactor inside DCG/PSDCG and use the printed PSnDCG
    /// denominator form (audit mode); the default is the standard definition
    /// where a perfect ranking scores 1.
    bool literal_dcg = false;
};

// Per-query metrics. truth must be sorted and duplicate-free; ranks beyond
// the available predictions count as misses.
double precision_at_k(const Prediction& pred, const std::vector<std::uint32_t>& truth, int k);
double ndcg_at_k(const Prediction& pred, const std::vector<std::uint32_t>& truth, int k,
                 const MetricOptions& opts = {});
double psp_at_k(const Prediction& pred, const std::vector<std::uint32_t>& truth,
                const std::vector<double>& propensities, int k);
double psndcg_at_k(const Prediction& pred, const std::vector<std::uint32_t>& truth,
                   const std::vector<double>& propensities, int k, const MetricOptions& opts = {});
double recall_metric_at_k(const Prediction& pred, const std::vector<std::uint32_t>& truth, int k);

/// Distinct labels appearing in any document's top-k, divided by L.
double coverage_at_k(const std::vector<Prediction>& preds, int k, std::uint64_t num_labels);

/// p_l = 1 / (1 + C exp(-A ln(N_l + B))) with C = (ln N - 1)(B + 1)^A.
struct PropensityModel {
    double a = 0.55;
    double b = 1.5;
    double c = 0.0;
    std::vector<double> per_label;
};
PropensityModel compute_propensities(const std::vector<std::uint64_t>& label_frequencies, std::uint64_t num_points,
                                     double a = 0.55, double b = 1.5);

/// Labels sorted by descending training frequency and split into equal-count
/// bins; bin 1 holds the most frequent labels, the last bin the tail. The
/// per-bin contributions to P@k over the evaluated documents sum to the
/// overall P@k.
struct QuantileAnalysis {
    std::vector<double> bin_contribution;
    std::vector<std::uint8_t> bin_of_label;
    double overall = 0.0;
};
QuantileAnalysis quantile_analysis(const std::vector<Prediction>& preds,
                                   const std::vector<std::vector<std::uint32_t>>& truth,
                                   const std::vector<std::uint64_t>& label_frequencies, int k = 5, int bins = 5);

/// Identity data for trivial/reciprocal filtering: each test document may map
/// to a label id (its own identity), and train_pairs holds (train document
/// identity, label) pairs.
struct ReciprocalFilter {
    std::vector<std::int64_t> test_doc_identity; // label id, or -1 when unknown
    std::unordered_set<std::uint64_t> train_pairs;

    static std::uint64_t pack(std::uint32_t doc_identity, std::uint32_t label) {
        return (static_cast<std::uint64_t>(doc_identity) << 32) | label;
    }

    /// Exact string match of document titles against label titles.
    static ReciprocalFilter from_titles(const std::vector<std::string>& test_doc_titles,
                                        const std::vector<std::string>& label_titles,
                                        const std::vector<std::string>& train_doc_titles,
                                        const std::vector<std::vector<std::uint32_t>>& train_ground_truth);

    /// Explicit doc-index -> label-id maps ("doc label" per line).
    static ReciprocalFilter from_map_files(const std::string& test_map_path, const std::string& train_map_path,
                                           std::size_t num_test_docs,
                                           const std::vector<std::vector<std::uint32_t>>& train_ground_truth);
};

struct FilterStats {
    std::uint64_t removed_self = 0;
    std::uint64_t removed_reciprocal = 0;
};

/// Removes (a) predictions equal to the query document itself and (b)
/// predictions whose reverse pair appears in the train ground truth. Removed
/// slots are deleted, so later predictions move up.
FilterStats filter_trivial_and_reciprocal(std::vector<Prediction>& preds, const ReciprocalFilter& filter);

/// alpha * s + (1 - alpha) * sigmoid(<x_i, z_l>) per (document, predicted
/// label), followed by a re-sort of each list.
void bow_metadata_rescore(std::vector<Prediction>& preds, const Dataset& docs,
                          const std::vector<SparseVector>& label_texts, double alpha);

struct EvalReport {
    std::vector<int> ks = {1, 3, 5};
    std::vector<double> precision, ndcg, psp, psndcg; // indexed like ks
    double recall_at_10 = 0.0;
    double recall_at_20 = 0.0;
    double coverage_at_20 = 0.0;
    QuantileAnalysis quantiles;
    std::uint64_t evaluated_docs = 0; // documents with non-empty truth

    std::map<std::string, double> to_kv() const;
};

/// Full protocol over one prediction set. Documents with empty ground truth
/// are excluded from every average. When label_frequencies is empty the
/// propensity-scored metrics fall back to unit propensities and the quantile
/// table is omitted.
EvalReport evaluate_predictions(const std::vector<Prediction>& preds,
                                const std::vector<std::vector<std::uint32_t>>& truth, std::uint64_t num_labels,
                                const std::vector<std::uint64_t>& label_frequencies, std::uint64_t train_points,
                                double prop_a = 0.55, double prop_b = 1.5, const MetricOptions& opts = {});

/// Empirics of the approximate-likelihood decomposition: sparsity s, beam
/// recall r, the induced false-positive/true-negative rates, the optimal
/// default likelihood eta*, the residual loss Delta, both likelihoods, and
/// the excess-loss bound term.
struct TheoremDiagnostics {
    double sparsity = 0.0;
    double recall = 0.0;
    double fpr = 0.0;
    double tnr = 0.0;
    double eta_star = 0.0;
    double residual_loss = 0.0;     // Delta, summed over non-shortlisted pairs
    double full_likelihood = 0.0;   // mean over all N*L pairs of the augmented loss
    double approx_likelihood = 0.0; // shortlisted-pair loss with the K/(NLB) factor
    double decomposition_gap = 0.0;
    double bound_term = 0.0; // s(1-r) ln(1/(s(1-r)))
    std::uint64_t missed_positives = 0;
    std::uint64_t excluded_negatives = 0;
    std::uint32_t beam = 0;

    std::map<std::string, double> to_kv() const;
};

TheoremDiagnostics theorem_diagnostics(const Model& m, const Dataset& d, std::uint32_t beam, int threads);

/// eta* and companions from externally measured quantities.
TheoremDiagnostics theorem_rates(double sparsity, double recall, double beam, double clusters);

void write_report_file(const std::map<std::string, double>& kv, const std::string& path);

} // namespace decaf
