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

#include "decaf/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include "decaf/common.hpp"
#include "decaf/parallel.hpp"
#include "decaf/shortlister.hpp"

namespace decaf {

namespace {

bool is_hit(const std::vector<std::uint32_t>& truth, std::uint32_t label) {
    return std::binary_search(truth.begin(), truth.end(), label);
}

double log2_discount(std::size_t rank1based) { return std::log2(static_cast<double>(rank1based) + 1.0); }

} // namespace

double precision_at_k(const Prediction& pred, const std::vector<std::uint32_t>& truth, int k) {
    require(k >= 1, "precision_at_k: k must be >= 1");
    std::size_t hits = 0;
    const std::size_t upto = std::min<std::size_t>(pred.ranked.size(), static_cast<std::size_t>(k));
    for (std::size_t j = 0; j < upto; ++j)
        if (is_hit(truth, pred.ranked[j].first)) ++hits;
    return static_cast<double>(hits) / static_cast<double>(k);
}

double ndcg_at_k(const Prediction& pred, const std::vector<std::uint32_t>& truth, int k,
                 const MetricOptions& opts) {
    require(k >= 1, "ndcg_at_k: k must be >= 1");
    if (truth.empty()) return 0.0;
    double dcg = 0.0;
    const std::size_t upto = std::min<std::size_t>(pred.ranked.size(), static_cast<std::size_t>(k));
    for (std::size_t j = 0; j < upto; ++j)
        if (is_hit(truth, pred.ranked[j].first)) dcg += 1.0 / log2_discount(j + 1);
    if (opts.literal_dcg) dcg /= static_cast<double>(k);
    double denom = 0.0;
    const std::size_t ideal = std::min<std::size_t>(truth.size(), static_cast<std::size_t>(k));
    for (std::size_t j = 1; j <= ideal; ++j) denom += 1.0 / log2_discount(j);
    return denom > 0.0 ? dcg / denom : 0.0;
}

double psp_at_k(const Prediction& pred, const std::vector<std::uint32_t>& truth,
                const std::vector<double>& propensities, int k) {
    require(k >= 1, "psp_at_k: k must be >= 1");
    double sum = 0.0;
    const std::size_t upto = std::min<std::size_t>(pred.ranked.size(), static_cast<std::size_t>(k));
    for (std::size_t j = 0; j < upto; ++j) {
        const auto l = pred.ranked[j].first;
        if (is_hit(truth, l)) sum += 1.0 / propensities[l];
    }
    return sum / static_cast<double>(k);
}

double psndcg_at_k(const Prediction& pred, const std::vector<std::uint32_t>& truth,
                   const std::vector<double>& propensities, int k, const MetricOptions& opts) {
    require(k >= 1, "psndcg_at_k: k must be >= 1");
    double psdcg = 0.0;
    const std::size_t upto = std::min<std::size_t>(pred.ranked.size(), static_cast<std::size_t>(k));
    for (std::size_t j = 0; j < upto; ++j) {
        const auto l = pred.ranked[j].first;
        if (is_hit(truth, l)) psdcg += 1.0 / (propensities[l] * log2_discount(j + 1));
    }
    double denom = 0.0;
    if (opts.literal_dcg) {
        psdcg /= static_cast<double>(k);
        for (int j = 1; j <= k; ++j) denom += 1.0 / (std::log2(static_cast<double>(j)) + 1.0);
    } else {
        for (int j = 1; j <= k; ++j) denom += 1.0 / log2_discount(static_cast<std::size_t>(j));
    }
    return psdcg / denom;
}

double recall_metric_at_k(const Prediction& pred, const std::vector<std::uint32_t>& truth, int k) {
    require(k >= 1, "recall_metric_at_k: k must be >= 1");
    if (truth.empty()) return 0.0;
    std::size_t hits = 0;
    const std::size_t upto = std::min<std::size_t>(pred.ranked.size(), static_cast<std::size_t>(k));
    for (std::size_t j = 0; j < upto; ++j)
        if (is_hit(truth, pred.ranked[j].first)) ++hits;
    return static_cast<double>(hits) / static_cast<double>(truth.size());
}

double coverage_at_k(const std::vector<Prediction>& preds, int k, std::uint64_t num_labels) {
    require(k >= 1 && num_labels > 0, "coverage_at_k: bad arguments");
    std::vector<std::uint8_t> seen(num_labels, 0);
    for (const auto& p : preds) {
        const std::size_t upto = std::min<std::size_t>(p.ranked.size(), static_cast<std::size_t>(k));
        for (std::size_t j = 0; j < upto; ++j) seen[p.ranked[j].first] = 1;
    }
    std::uint64_t distinct = 0;
    for (const auto s : seen) distinct += s;
    return static_cast<double>(distinct) / static_cast<double>(num_labels);
}

PropensityModel compute_propensities(const std::vector<std::uint64_t>& label_frequencies, std::uint64_t num_points,
                                     double a, double b) {
    require(num_points > 0, "propensities: dataset size must be > 0");
    PropensityModel model;
    model.a = a;
    model.b = b;
    model.c = (std::log(static_cast<double>(num_points)) - 1.0) * std::pow(b + 1.0, a);
    model.per_label.resize(label_frequencies.size());
    for (std::size_t l = 0; l < label_frequencies.size(); ++l) {
        const double nl = static_cast<double>(label_frequencies[l]);
        model.per_label[l] = 1.0 / (1.0 + model.c * std::exp(-a * std::log(nl + b)));
    }
    return model;
}

QuantileAnalysis quantile_analysis(const std::vector<Prediction>& preds,
                                   const std::vector<std::vector<std::uint32_t>>& truth,
                                   const std::vector<std::uint64_t>& label_frequencies, int k, int bins) {
    require(bins >= 1, "quantile_analysis: bins must be >= 1");
    require(preds.size() == truth.size(), "quantile_analysis: prediction/truth size mismatch");
    const std::size_t num_labels = label_frequencies.size();

    QuantileAnalysis qa;
    qa.bin_contribution.assign(bins, 0.0);
    qa.bin_of_label.assign(num_labels, 0);

    // Most frequent labels first; the last bin holds the tail. Equal bin
    // sizes, remainder spread over the head bins.
    std::vector<std::uint32_t> order(num_labels);
    for (std::size_t l = 0; l < num_labels; ++l) order[l] = static_cast<std::uint32_t>(l);
    std::sort(order.begin(), order.end(), [&](std::uint32_t x, std::uint32_t y) {
        if (label_frequencies[x] != label_frequencies[y]) return label_frequencies[x] > label_frequencies[y];
        return x < y;
    });
    const std::size_t base = num_labels / bins;
    const std::size_t extra = num_labels % bins;
    std::size_t at = 0;
    for (int b = 0; b < bins; ++b) {
        const std::size_t size = base + (static_cast<std::size_t>(b) < extra ? 1 : 0);
        for (std::size_t i = 0; i < size; ++i) qa.bin_of_label[order[at++]] = static_cast<std::uint8_t>(b);
    }

    std::uint64_t evaluated = 0;
    std::vector<std::uint64_t> hits(bins, 0);
    for (std::size_t i = 0; i < preds.size(); ++i) {
        if (truth[i].empty()) continue;
        ++evaluated;
        const std::size_t upto = std::min<std::size_t>(preds[i].ranked.size(), static_cast<std::size_t>(k));
        for (std::size_t j = 0; j < upto; ++j) {
            const auto l = preds[i].ranked[j].first;
            if (is_hit(truth[i], l)) ++hits[qa.bin_of_label[l]];
        }
    }
    if (evaluated > 0) {
        const double denom = static_cast<double>(k) * static_cast<double>(evaluated);
        for (int b = 0; b < bins; ++b) qa.bin_contribution[b] = static_cast<double>(hits[b]) / denom;
    }
    for (const double c : qa.bin_contribution) qa.overall += c;
    return qa;
}

ReciprocalFilter ReciprocalFilter::from_titles(const std::vector<std::string>& test_doc_titles,
                                               const std::vector<std::string>& label_titles,
                                               const std::vector<std::string>& train_doc_titles,
                                               const std::vector<std::vector<std::uint32_t>>& train_ground_truth) {
    ReciprocalFilter f;
    std::unordered_map<std::string, std::uint32_t> label_of_title;
    for (std::size_t l = 0; l < label_titles.size(); ++l)
        label_of_title.emplace(label_titles[l], static_cast<std::uint32_t>(l));

    f.test_doc_identity.resize(test_doc_titles.size(), -1);
    for (std::size_t i = 0; i < test_doc_titles.size(); ++i) {
        const auto it = label_of_title.find(test_doc_titles[i]);
        if (it != label_of_title.end()) f.test_doc_identity[i] = it->second;
    }
    require(train_doc_titles.size() == train_ground_truth.size(),
            "reciprocal filter: train title/ground-truth size mismatch");
    for (std::size_t i = 0; i < train_doc_titles.size(); ++i) {
        const auto it = label_of_title.find(train_doc_titles[i]);
        if (it == label_of_title.end()) continue;
        for (const auto l : train_ground_truth[i]) f.train_pairs.insert(pack(it->second, l));
    }
    return f;
}

namespace {

std::unordered_map<std::size_t, std::uint32_t> read_identity_map(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "'");
    std::unordered_map<std::size_t, std::uint32_t> map;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::size_t doc = 0;
        std::uint32_t label = 0;
        if (!(ss >> doc >> label)) throw ParseError(path + ":" + std::to_string(line_no) + ": expected 'doc label'");
        map[doc] = label;
    }
    return map;
}

} // namespace

ReciprocalFilter ReciprocalFilter::from_map_files(const std::string& test_map_path,
                                                  const std::string& train_map_path, std::size_t num_test_docs,
                                                  const std::vector<std::vector<std::uint32_t>>& train_ground_truth) {
    ReciprocalFilter f;
    f.test_doc_identity.assign(num_test_docs, -1);
    for (const auto& [doc, label] : read_identity_map(test_map_path)) {
        require(doc < num_test_docs, "reciprocal filter: test doc index out of range");
        f.test_doc_identity[doc] = label;
    }
    for (const auto& [doc, label] : read_identity_map(train_map_path)) {
        require(doc < train_ground_truth.size(), "reciprocal filter: train doc index out of range");
        for (const auto l : train_ground_truth[doc]) f.train_pairs.insert(pack(label, l));
    }
    return f;
}

FilterStats filter_trivial_and_reciprocal(std::vector<Prediction>& preds, const ReciprocalFilter& filter) {
    require(filter.test_doc_identity.size() == preds.size(), "reciprocal filter: size mismatch");
    FilterStats stats;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const std::int64_t self = filter.test_doc_identity[i];
        if (self < 0) continue;
        auto& ranked = preds[i].ranked;
        std::vector<std::pair<std::uint32_t, double>> kept;
        kept.reserve(ranked.size());
        for (const auto& entry : ranked) {
            if (static_cast<std::int64_t>(entry.first) == self) {
                ++stats.removed_self;
                continue;
            }
            if (filter.train_pairs.contains(
                    ReciprocalFilter::pack(entry.first, static_cast<std::uint32_t>(self)))) {
                ++stats.removed_reciprocal;
                continue;
            }
            kept.push_back(entry);
        }
        ranked = std::move(kept);
    }
    return stats;
}

void bow_metadata_rescore(std::vector<Prediction>& preds, const Dataset& docs,
                          const std::vector<SparseVector>& label_texts, double alpha) {
    require(alpha >= 0.0 && alpha <= 1.0, "rescore: alpha must be in [0, 1]");
    require(preds.size() == docs.num_points, "rescore: prediction/document count mismatch");
    for (std::size_t i = 0; i < preds.size(); ++i) {
        for (auto& [label, score] : preds[i].ranked) {
            const double text_sim = sigmoid(sparse_dot(docs.documents[i], label_texts[label]));
            score = alpha * score + (1.0 - alpha) * text_sim;
        }
        std::sort(preds[i].ranked.begin(), preds[i].ranked.end(), [](const auto& a, const auto& b) {
            if (a.second != b.second) return a.second > b.second;
            return a.first < b.first;
        });
    }
}

std::map<std::string, double> EvalReport::to_kv() const {
    std::map<std::string, double> kv;
    for (std::size_t i = 0; i < ks.size(); ++i) {
        const std::string k = std::to_string(ks[i]);
        kv["P@" + k] = precision[i];
        kv["nDCG@" + k] = ndcg[i];
        kv["PSP@" + k] = psp[i];
        kv["PSnDCG@" + k] = psndcg[i];
    }
    kv["R@10"] = recall_at_10;
    kv["R@20"] = recall_at_20;
    kv["C@20"] = coverage_at_20;
    for (std::size_t b = 0; b < quantiles.bin_contribution.size(); ++b)
        kv["quantile_P@5_bin" + std::to_string(b + 1)] = quantiles.bin_contribution[b];
    kv["evaluated_docs"] = static_cast<double>(evaluated_docs);
    return kv;
}

EvalReport evaluate_predictions(const std::vector<Prediction>& preds,
                                const std::vector<std::vector<std::uint32_t>>& truth, std::uint64_t num_labels,
                                const std::vector<std::uint64_t>& label_frequencies, std::uint64_t train_points,
                                double prop_a, double prop_b, const MetricOptions& opts) {
    require(preds.size() == truth.size(), "evaluate: prediction/truth size mismatch");
    EvalReport report;
    report.precision.assign(report.ks.size(), 0.0);
    report.ndcg.assign(report.ks.size(), 0.0);
    report.psp.assign(report.ks.size(), 0.0);
    report.psndcg.assign(report.ks.size(), 0.0);

    std::vector<double> propensities(num_labels, 1.0);
    if (!label_frequencies.empty()) {
        require(label_frequencies.size() == num_labels, "evaluate: frequency table size mismatch");
        propensities = compute_propensities(label_frequencies, train_points, prop_a, prop_b).per_label;
    }

    for (std::size_t i = 0; i < preds.size(); ++i) {
        if (truth[i].empty()) continue;
        ++report.evaluated_docs;
        for (std::size_t ki = 0; ki < report.ks.size(); ++ki) {
            const int k = report.ks[ki];
            report.precision[ki] += precision_at_k(preds[i], truth[i], k);
            report.ndcg[ki] += ndcg_at_k(preds[i], truth[i], k, opts);
            report.psp[ki] += psp_at_k(preds[i], truth[i], propensities, k);
            report.psndcg[ki] += psndcg_at_k(preds[i], truth[i], propensities, k, opts);
        }
        report.recall_at_10 += recall_metric_at_k(preds[i], truth[i], 10);
        report.recall_at_20 += recall_metric_at_k(preds[i], truth[i], 20);
    }
    if (report.evaluated_docs > 0) {
        const double n = static_cast<double>(report.evaluated_docs);
        for (std::size_t ki = 0; ki < report.ks.size(); ++ki) {
            report.precision[ki] /= n;
            report.ndcg[ki] /= n;
            report.psp[ki] /= n;
            report.psndcg[ki] /= n;
        }
        report.recall_at_10 /= n;
        report.recall_at_20 /= n;
    }
    report.coverage_at_20 = coverage_at_k(preds, 20, num_labels);
    if (!label_frequencies.empty()) report.quantiles = quantile_analysis(preds, truth, label_frequencies, 5, 5);
    return report;
}

std::map<std::string, double> TheoremDiagnostics::to_kv() const {
    return {
        {"sparsity", sparsity},
        {"recall", recall},
        {"FPR", fpr},
        {"TNR", tnr},
        {"eta_star", eta_star},
        {"Delta", residual_loss},
        {"full_likelihood", full_likelihood},
        {"approx_likelihood", approx_likelihood},
        {"decomposition_gap", decomposition_gap},
        {"bound_term", bound_term},
        {"missed_positives", static_cast<double>(missed_positives)},
        {"excluded_negatives", static_cast<double>(excluded_negatives)},
        {"beam", static_cast<double>(beam)},
    };
}

TheoremDiagnostics theorem_rates(double sparsity, double recall, double beam, double clusters) {
    TheoremDiagnostics t;
    t.sparsity = sparsity;
    t.recall = recall;
    t.fpr = (1.0 - recall) * sparsity;
    t.tnr = (1.0 - sparsity) - beam / clusters + recall * sparsity;
    t.eta_star = t.fpr > 0.0 ? t.fpr / (t.fpr + t.tnr) : 0.0;
    const double x = sparsity * (1.0 - recall);
    t.bound_term = x > 0.0 ? x * std::log(1.0 / x) : 0.0;
    return t;
}

TheoremDiagnostics theorem_diagnostics(const Model& m, const Dataset& d, std::uint32_t beam, int threads) {
    const std::uint64_t n = d.num_points;
    const std::uint64_t l = d.num_labels;
    const std::uint64_t k = m.num_clusters();
    require(beam >= 1 && beam <= k, "theorem_diagnostics: beam out of range");
    require(n > 0 && l > 0, "theorem_diagnostics: empty dataset");

    const auto embeddings = embed_all_documents(m, d, threads);
    const auto w = precompute_classifiers(m);

    const int t = resolve_threads(threads);
    std::vector<double> short_loss(static_cast<std::size_t>(t), 0.0);
    std::vector<std::uint64_t> covered(static_cast<std::size_t>(t), 0), positives(static_cast<std::size_t>(t), 0),
        shortlisted(static_cast<std::size_t>(t), 0);

    parallel_for(n, t, [&](std::size_t tid, std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            const auto sl = shortlist(m.shortlister, std::span<const float>(embeddings.row(i)), beam);
            shortlisted[tid] += sl.label_ids.size();
            const auto& gt = d.ground_truth[i];
            positives[tid] += gt.size();
            for (const auto label : sl.label_ids) {
                const bool pos = std::binary_search(gt.begin(), gt.end(), label);
                if (pos) ++covered[tid];
                const double score = dot(w.row(label), std::span<const float>(embeddings.row(i)));
                short_loss[tid] += log1p_exp_neg((pos ? 1.0 : -1.0) * score);
            }
        }
    });

    double sum_short = 0.0;
    std::uint64_t total_pos = 0, total_cov = 0, total_short = 0;
    for (int i = 0; i < t; ++i) {
        sum_short += short_loss[i];
        total_pos += positives[i];
        total_cov += covered[i];
        total_short += shortlisted[i];
    }

    const double nl = static_cast<double>(n) * static_cast<double>(l);
    const double s = static_cast<double>(total_pos) / nl;
    const double r = total_pos > 0 ? static_cast<double>(total_cov) / static_cast<double>(total_pos) : 1.0;

    TheoremDiagnostics diag = theorem_rates(s, r, static_cast<double>(beam), static_cast<double>(k));
    diag.beam = beam;
    diag.missed_positives = total_pos - total_cov;
    const std::uint64_t excluded_total = n * l - total_short;
    diag.excluded_negatives = excluded_total - diag.missed_positives;

    // Residual loss under the augmented likelihood at eta*. With full recall
    // both terms vanish (0 * ln(1/0) is taken as 0).
    double delta = 0.0;
    if (diag.missed_positives > 0) delta += static_cast<double>(diag.missed_positives) * std::log(1.0 / diag.eta_star);
    if (diag.eta_star > 0.0)
        delta += static_cast<double>(diag.excluded_negatives) * std::log(1.0 / (1.0 - diag.eta_star));
    diag.residual_loss = delta;

    diag.approx_likelihood = sum_short * static_cast<double>(k) / (nl * static_cast<double>(beam));
    diag.full_likelihood = (sum_short + delta) / nl;
    const double recomposed =
        (nl * static_cast<double>(beam) / static_cast<double>(k) * diag.approx_likelihood + delta) / nl;
    diag.decomposition_gap = std::abs(diag.full_likelihood - recomposed);
    return diag;
}

void write_report_file(const std::map<std::string, double>& kv, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write '" + path + "'");
    out.precision(12);
    for (const auto& [key, value] : kv) out << key << "=" << value << "\n";
}

} // namespace decaf
