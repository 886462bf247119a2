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
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "decaf/sparse.hpp"

namespace decaf {

/// A multi-label text dataset in the sparse repository format: N documents
/// over a V-token vocabulary, L labels, per-document sorted positive label
/// lists, and (optionally) one bag-of-tokens text per label.
struct Dataset {
    std::uint64_t num_points = 0;
    std::uint64_t num_tokens = 0;
    std::uint64_t num_labels = 0;
    std::vector<SparseVector> documents;
    std::vector<std::vector<std::uint32_t>> ground_truth;
    std::vector<SparseVector> label_texts; // empty, or exactly num_labels rows
    std::vector<std::string> raw_titles;   // empty, or one per document

    bool has_label_texts() const { return !label_texts.empty(); }

    /// Checks every structural invariant; throws DomainError on violation.
    void validate() const;
};

struct DatasetStats {
    double avg_tokens_per_doc = 0.0;   // (1/N) sum ||x_i||_0
    double avg_tokens_per_label = 0.0; // (1/L) sum ||z_l||_0
    double avg_labels_per_doc = 0.0;
    double avg_points_per_label = 0.0; // N * avg_labels_per_doc / L
    std::vector<std::uint64_t> label_frequencies;
};

struct ParseOptions {
    /// Subtract one from token ids (for one-based feature files).
    bool one_based_tokens = false;
};

/// Parses the sparse repository format:
///   header "N V L", then N lines "l1,l2,... t1:w1 t2:w2 ...".
/// A line starting with a space has an empty label list. Errors carry the
/// offending line number.
Dataset parse_xc_file(const std::string& path, const ParseOptions& opts = {});
Dataset parse_xc_stream(std::istream& in, const std::string& name, const ParseOptions& opts = {});

/// Loads label texts into d from a sparse file with exactly d.num_labels rows
/// (label lists in that file are ignored) or, if tokenize_raw is set, from a
/// raw one-title-per-line file run through the whitespace tokenizer and
/// build_tfidf against d.num_tokens.
void load_label_texts(Dataset& d, const std::string& path, const ParseOptions& opts = {});

void write_xc_file(const Dataset& d, const std::string& path);
void write_xc_stream(const Dataset& d, std::ostream& out);

/// Smoothed TF-IDF: weight(t, doc) = count * (ln((N+1)/(df_t+1)) + 1), then
/// each vector is L2-normalized. Documents with no tokens stay empty.
std::vector<SparseVector> build_tfidf(const std::vector<SparseVector>& raw_counts, std::uint64_t vocab_size);

/// Whitespace tokenizer over raw titles. Assigns token ids in order of first
/// appearance (or resolves against an existing vocabulary when provided).
struct RawTextCorpus {
    std::vector<SparseVector> counts;
    std::vector<std::string> vocab;
    std::vector<std::string> titles;
};
RawTextCorpus tokenize_raw_titles(const std::string& path);

DatasetStats dataset_stats(const Dataset& d);

/// One title per line; line i names document i (used by the reciprocal-pair
/// filter).
std::vector<std::string> read_title_file(const std::string& path);

} // namespace decaf
