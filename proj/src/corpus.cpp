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

#include "decaf/corpus.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include "decaf/common.hpp"

namespace decaf {

namespace {

[[noreturn]] void parse_fail(const std::string& name, std::size_t line_no, const std::string& what) {
    throw ParseError(name + ":" + std::to_string(line_no) + ": " + what);
}

std::uint64_t parse_u64(std::string_view s, const std::string& name, std::size_t line_no, const char* what) {
    std::uint64_t v = 0;
    const auto* begin = s.data();
    const auto* end = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(begin, end, v);
    if (ec != std::errc{} || ptr != end) parse_fail(name, line_no, std::string("bad ") + what + " '" + std::string(s) + "'");
    return v;
}

double parse_weight(std::string_view s, const std::string& name, std::size_t line_no) {
    // strtod accepts scientific notation; from_chars<double> lacks it on some
    // standard libraries.
    std::string buf(s);
    char* endp = nullptr;
    const double v = std::strtod(buf.c_str(), &endp);
    if (endp != buf.c_str() + buf.size() || buf.empty())
        parse_fail(name, line_no, "bad weight '" + buf + "'");
    if (!std::isfinite(v)) parse_fail(name, line_no, "non-finite weight '" + buf + "'");
    return v;
}

} // namespace

void Dataset::validate() const {
    require(documents.size() == num_points, "dataset: document count mismatch");
    require(ground_truth.size() == num_points, "dataset: ground truth count mismatch");
    require(label_texts.empty() || label_texts.size() == num_labels, "dataset: label text row count mismatch");
    require(raw_titles.empty() || raw_titles.size() == num_points, "dataset: raw title count mismatch");
    for (const auto& doc : documents) doc.validate(num_tokens);
    for (const auto& z : label_texts) z.validate(num_tokens);
    for (const auto& gt : ground_truth) {
        for (std::size_t i = 0; i < gt.size(); ++i) {
            require(gt[i] < num_labels, "dataset: label id out of range");
            require(i == 0 || gt[i] > gt[i - 1], "dataset: ground truth not sorted/duplicate-free");
        }
    }
}

Dataset parse_xc_stream(std::istream& in, const std::string& name, const ParseOptions& opts) {
    std::string line;
    if (!std::getline(in, line)) throw ParseError(name + ":1: missing header");
    std::istringstream hdr(line);
    std::uint64_t n = 0, v = 0, l = 0;
    if (!(hdr >> n >> v >> l)) parse_fail(name, 1, "malformed header, expected 'N V L'");
    std::string rest;
    if (hdr >> rest) parse_fail(name, 1, "malformed header, expected exactly three integers");

    Dataset d;
    d.num_points = n;
    d.num_tokens = v;
    d.num_labels = l;
    d.documents.resize(n);
    d.ground_truth.resize(n);

    for (std::uint64_t i = 0; i < n; ++i) {
        const std::size_t line_no = i + 2;
        if (!std::getline(in, line)) parse_fail(name, line_no, "unexpected end of file");
        if (!line.empty() && line.back() == '\r') line.pop_back();

        std::string_view sv(line);
        // Leading space means an empty label list.
        std::string_view label_part, feat_part;
        if (!sv.empty() && sv.front() == ' ') {
            label_part = std::string_view();
            feat_part = sv.substr(1);
        } else {
            const auto sp = sv.find(' ');
            label_part = sv.substr(0, sp);
            feat_part = sp == std::string_view::npos ? std::string_view() : sv.substr(sp + 1);
        }

        auto& labels = d.ground_truth[i];
        std::string_view lp = label_part;
        while (!lp.empty()) {
            const auto comma = lp.find(',');
            const auto tok = lp.substr(0, comma);
            if (tok.empty()) parse_fail(name, line_no, "empty label id");
            const std::uint64_t id = parse_u64(tok, name, line_no, "label id");
            if (id >= l) parse_fail(name, line_no, "label id " + std::to_string(id) + " >= L");
            labels.push_back(static_cast<std::uint32_t>(id));
            if (comma == std::string_view::npos) break;
            lp = lp.substr(comma + 1);
        }
        std::sort(labels.begin(), labels.end());
        labels.erase(std::unique(labels.begin(), labels.end()), labels.end());

        auto& doc = d.documents[i];
        std::string_view fp = feat_part;
        std::uint64_t prev_id = 0;
        bool first = true;
        while (!fp.empty()) {
            const auto sp = fp.find(' ');
            const auto pair = fp.substr(0, sp);
            if (!pair.empty()) {
                const auto colon = pair.rfind(':');
                if (colon == std::string_view::npos) parse_fail(name, line_no, "expected 'token:weight'");
                std::uint64_t tid = parse_u64(pair.substr(0, colon), name, line_no, "token id");
                if (opts.one_based_tokens) {
                    if (tid == 0) parse_fail(name, line_no, "token id 0 in a one-based file");
                    --tid;
                }
                const double w = parse_weight(pair.substr(colon + 1), name, line_no);
                if (tid >= v) parse_fail(name, line_no, "token id " + std::to_string(tid) + " >= V");
                if (!first && tid == prev_id) parse_fail(name, line_no, "duplicate token id " + std::to_string(tid));
                if (w != 0.0) doc.push_back(static_cast<std::uint32_t>(tid), static_cast<float>(w));
                prev_id = tid;
                first = false;
            }
            if (sp == std::string_view::npos) break;
            fp = fp.substr(sp + 1);
        }
        std::sort(doc.entries.begin(), doc.entries.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
        for (std::size_t k = 1; k < doc.entries.size(); ++k)
            if (doc.entries[k].id == doc.entries[k - 1].id)
                parse_fail(name, line_no, "duplicate token id " + std::to_string(doc.entries[k].id));
        for (const auto& e : doc.entries)
            if (!std::isfinite(e.weight) || e.weight <= 0.0f)
                parse_fail(name, line_no, "token weight must be finite and > 0");
    }
    return d;
}

Dataset parse_xc_file(const std::string& path, const ParseOptions& opts) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "'");
    return parse_xc_stream(in, path, opts);
}

void load_label_texts(Dataset& d, const std::string& path, const ParseOptions& opts) {
    Dataset texts = parse_xc_file(path, opts);
    if (texts.num_points != d.num_labels)
        throw ParseError(path + ": expected " + std::to_string(d.num_labels) + " label text rows, got " +
                         std::to_string(texts.num_points));
    if (texts.num_tokens != d.num_tokens)
        throw ParseError(path + ": label text vocabulary size " + std::to_string(texts.num_tokens) +
                         " does not match dataset V=" + std::to_string(d.num_tokens));
    d.label_texts = std::move(texts.documents);
}

void write_xc_stream(const Dataset& d, std::ostream& out) {
    out << d.num_points << " " << d.num_tokens << " " << d.num_labels << "\n";
    for (std::uint64_t i = 0; i < d.num_points; ++i) {
        const auto& gt = d.ground_truth[i];
        for (std::size_t k = 0; k < gt.size(); ++k) out << (k ? "," : "") << gt[k];
        for (const auto& e : d.documents[i]) out << " " << e.id << ":" << e.weight;
        out << "\n";
    }
}

void write_xc_file(const Dataset& d, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write '" + path + "'");
    out.precision(9);
    write_xc_stream(d, out);
}

std::vector<SparseVector> build_tfidf(const std::vector<SparseVector>& raw_counts, std::uint64_t vocab_size) {
    require(vocab_size > 0, "tfidf: vocab_size must be > 0");
    const double n = static_cast<double>(raw_counts.size());
    std::vector<std::uint64_t> df(vocab_size, 0);
    for (const auto& doc : raw_counts) {
        doc.validate(vocab_size);
        for (const auto& e : doc) ++df[e.id];
    }
    std::vector<SparseVector> out(raw_counts.size());
    for (std::size_t i = 0; i < raw_counts.size(); ++i) {
        SparseVector v;
        v.entries.reserve(raw_counts[i].nnz());
        for (const auto& e : raw_counts[i]) {
            const double idf = std::log((n + 1.0) / (static_cast<double>(df[e.id]) + 1.0)) + 1.0;
            v.push_back(e.id, static_cast<float>(e.weight * idf));
        }
        v.l2_normalize();
        out[i] = std::move(v);
    }
    return out;
}

RawTextCorpus tokenize_raw_titles(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "'");
    RawTextCorpus corpus;
    std::unordered_map<std::string, std::uint32_t> vocab_ids;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        corpus.titles.push_back(line);
        std::istringstream ss(line);
        std::string tok;
        std::unordered_map<std::uint32_t, std::uint32_t> counts;
        while (ss >> tok) {
            auto [it, inserted] = vocab_ids.try_emplace(tok, static_cast<std::uint32_t>(corpus.vocab.size()));
            if (inserted) corpus.vocab.push_back(tok);
            ++counts[it->second];
        }
        SparseVector v;
        v.entries.reserve(counts.size());
        for (const auto& [id, c] : counts) v.push_back(id, static_cast<float>(c));
        std::sort(v.entries.begin(), v.entries.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
        corpus.counts.push_back(std::move(v));
    }
    return corpus;
}

DatasetStats dataset_stats(const Dataset& d) {
    DatasetStats s;
    s.label_frequencies.assign(d.num_labels, 0);
    std::uint64_t doc_tokens = 0, doc_labels = 0;
    for (const auto& doc : d.documents) doc_tokens += doc.nnz();
    for (const auto& gt : d.ground_truth) {
        doc_labels += gt.size();
        for (const auto l : gt) ++s.label_frequencies[l];
    }
    const double n = static_cast<double>(d.num_points);
    s.avg_tokens_per_doc = n > 0 ? static_cast<double>(doc_tokens) / n : 0.0;
    s.avg_labels_per_doc = n > 0 ? static_cast<double>(doc_labels) / n : 0.0;
    if (!d.label_texts.empty()) {
        std::uint64_t lbl_tokens = 0;
        for (const auto& z : d.label_texts) lbl_tokens += z.nnz();
        s.avg_tokens_per_label = static_cast<double>(lbl_tokens) / static_cast<double>(d.num_labels);
    }
    s.avg_points_per_label =
        d.num_labels > 0 ? n * s.avg_labels_per_doc / static_cast<double>(d.num_labels) : 0.0;
    return s;
}

std::vector<std::string> read_title_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "'");
    std::vector<std::string> titles;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        titles.push_back(line);
    }
    return titles;
}

} // namespace decaf
