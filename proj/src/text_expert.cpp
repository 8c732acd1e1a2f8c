#include "vqamoe/text_expert.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

namespace vqamoe::text_expert {

const std::string SerializedDoc::kSeparator = "[SEP]";

void OcrCell::validate() const {
    if (words.empty()) throw std::invalid_argument("OcrCell: empty word list");
    if (box[0] > box[2] || box[1] > box[3]) {
        throw std::invalid_argument("OcrCell: degenerate box");
    }
}

SerializedDoc serialize_cells(const std::vector<std::string>& question_tokens,
                              const std::vector<OcrCell>& cells) {
    for (const OcrCell& c : cells) c.validate();

    // Reading order: row bands by vertical center, left to right inside.
    std::vector<double> heights;
    for (const OcrCell& c : cells) heights.push_back(c.box[3] - c.box[1]);
    double band_tol = 0.0;
    if (!cells.empty()) {
        std::vector<double> sorted_h = heights;
        std::sort(sorted_h.begin(), sorted_h.end());
        band_tol = 0.5 * sorted_h[sorted_h.size() / 2];
    }

    std::vector<std::size_t> order(cells.size());
    std::iota(order.begin(), order.end(), 0);
    auto center_y = [&](std::size_t i) { return 0.5 * (cells[i].box[1] + cells[i].box[3]); };
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return center_y(a) < center_y(b); });

    // Group into bands, then sort each band by x1 (stable: ties keep input order).
    std::vector<std::size_t> serial;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i + 1;
        while (j < order.size() && center_y(order[j]) - center_y(order[i]) < band_tol) ++j;
        std::vector<std::size_t> band(order.begin() + i, order.begin() + j);
        std::stable_sort(band.begin(), band.end(), [&](std::size_t a, std::size_t b) {
            if (cells[a].box[0] != cells[b].box[0]) return cells[a].box[0] < cells[b].box[0];
            return a < b;
        });
        serial.insert(serial.end(), band.begin(), band.end());
        i = j;
    }

    SerializedDoc doc;
    doc.question_length = question_tokens.size();
    for (const std::string& q : question_tokens) {
        doc.tokens.push_back(q);
        doc.cell_index.push_back(SerializedDoc::kNoCell);
        doc.is_separator.push_back(false);
    }
    for (std::size_t cell : serial) {
        doc.separator_positions.push_back(doc.tokens.size());
        doc.tokens.push_back(SerializedDoc::kSeparator);
        doc.cell_index.push_back(SerializedDoc::kNoCell);
        doc.is_separator.push_back(true);
        for (const std::string& w : cells[cell].words) {
            doc.tokens.push_back(w);
            doc.cell_index.push_back(cell);
            doc.is_separator.push_back(false);
        }
    }
    return doc;
}

std::vector<std::vector<std::string>> split_cells(const SerializedDoc& doc) {
    std::size_t max_cell = 0;
    bool any = false;
    for (std::size_t c : doc.cell_index) {
        if (c != SerializedDoc::kNoCell) {
            max_cell = std::max(max_cell, c);
            any = true;
        }
    }
    std::vector<std::vector<std::string>> cells(any ? max_cell + 1 : 0);
    for (std::size_t i = 0; i < doc.tokens.size(); ++i) {
        if (doc.cell_index[i] != SerializedDoc::kNoCell) {
            cells[doc.cell_index[i]].push_back(doc.tokens[i]);
        }
    }
    return cells;
}

SpanPrediction predict_span(const SerializedDoc& doc, const std::vector<double>& start_logits,
                            const std::vector<double>& end_logits, std::size_t max_length) {
    const std::size_t n = doc.tokens.size();
    if (start_logits.size() != n || end_logits.size() != n) {
        throw std::invalid_argument("predict_span: logit length must match document length");
    }
    auto eligible = [&](std::size_t i) {
        return i >= doc.question_length && !doc.is_separator[i];
    };

    SpanPrediction best;
    best.empty = true;
    best.score = -std::numeric_limits<double>::infinity();
    for (std::size_t s = 0; s < n; ++s) {
        if (!eligible(s)) continue;
        for (std::size_t e = s; e < n && e < s + max_length; ++e) {
            if (!eligible(e)) continue;
            const double score = start_logits[s] + end_logits[e];
            if (score > best.score) {
                best.score = score;
                best.start = s;
                best.end = e;
                best.empty = false;
            }
        }
    }
    if (best.empty) return best;

    std::string answer;
    for (std::size_t i = best.start; i <= best.end; ++i) {
        if (doc.is_separator[i]) continue; // separators dropped from the answer
        if (!answer.empty()) answer += ' ';
        answer += doc.tokens[i];
    }
    best.answer = answer;
    return best;
}

// ---- ANLS -------------------------------------------------------------

std::string normalize_for_anls(const std::string& s) {
    std::string lowered;
    for (char ch : s) lowered.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));

    // Collapse whitespace runs.
    std::string collapsed;
    bool in_space = true;
    for (char ch : lowered) {
        if (std::isspace(static_cast<unsigned char>(ch))) {
            if (!in_space) collapsed.push_back(' ');
            in_space = true;
        } else {
            collapsed.push_back(ch);
            in_space = false;
        }
    }
    while (!collapsed.empty() && collapsed.back() == ' ') collapsed.pop_back();

    // Strip leading/trailing punctuation.
    std::size_t b = 0, e = collapsed.size();
    auto is_punct = [](char c) {
        return std::ispunct(static_cast<unsigned char>(c)) != 0;
    };
    while (b < e && is_punct(collapsed[b])) ++b;
    while (e > b && is_punct(collapsed[e - 1])) --e;
    return collapsed.substr(b, e - b);
}

std::size_t edit_distance(const std::string& a, const std::string& b) {
    const std::size_t n = a.size(), m = b.size();
    std::vector<std::size_t> prev(m + 1), cur(m + 1);
    std::iota(prev.begin(), prev.end(), std::size_t{0});
    for (std::size_t i = 1; i <= n; ++i) {
        cur[0] = i;
        for (std::size_t j = 1; j <= m; ++j) {
            const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
        }
        std::swap(prev, cur);
    }
    return prev[m];
}

double anls_pair(const std::string& prediction, const std::string& ground_truth) {
    const std::string p = normalize_for_anls(prediction);
    const std::string g = normalize_for_anls(ground_truth);
    if (p.empty() && g.empty()) return 1.0;
    const double nl = static_cast<double>(edit_distance(p, g)) /
                      static_cast<double>(std::max(p.size(), g.size()));
    return nl < 0.5 ? 1.0 - nl : 0.0;
}

double anls(const std::string& prediction, const std::vector<std::string>& ground_truths) {
    if (ground_truths.empty()) {
        throw std::invalid_argument("anls: ground-truth list must be non-empty");
    }
    double best = 0.0;
    for (const std::string& g : ground_truths) best = std::max(best, anls_pair(prediction, g));
    return best;
}

std::vector<OcrRecord> load_ocr_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open OCR file: " + path);
    std::vector<OcrRecord> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto j = nlohmann::json::parse(line);
        OcrRecord r;
        r.question = j.at("question").get<std::string>();
        for (const auto& cj : j.value("cells", nlohmann::json::array())) {
            OcrCell c;
            c.words = cj.at("words").get<std::vector<std::string>>();
            auto box = cj.at("box").get<std::vector<double>>();
            c.box = {box[0], box[1], box[2], box[3]};
            c.validate();
            r.cells.push_back(std::move(c));
        }
        r.answers = j.value("answers", std::vector<std::string>{});
        out.push_back(std::move(r));
    }
    return out;
}

void save_ocr_jsonl(const std::string& path, const std::vector<OcrRecord>& records) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write OCR file: " + path);
    for (const auto& r : records) {
        nlohmann::json cells = nlohmann::json::array();
        for (const auto& c : r.cells) {
            cells.push_back({{"words", c.words}, {"box", {c.box[0], c.box[1], c.box[2], c.box[3]}}});
        }
        nlohmann::json j{{"question", r.question}, {"cells", cells}, {"answers", r.answers}};
        out << j.dump() << "\n";
    }
}

} // namespace vqamoe::text_expert
