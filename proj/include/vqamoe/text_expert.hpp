#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

namespace vqamoe::text_expert {

struct OcrCell {
    std::vector<std::string> words;
    std::array<double, 4> box; // x1, y1, x2, y2 in image pixels

    void validate() const;
};

// {q1..qe, [SEP], c1, [SEP], c2, .., [SEP], cn} with per-token provenance.
struct SerializedDoc {
    static constexpr std::size_t kNoCell = static_cast<std::size_t>(-1);
    static const std::string kSeparator; // "[SEP]"

    std::vector<std::string> tokens;
    std::vector<std::size_t> cell_index;       // kNoCell for question tokens and separators
    std::vector<bool> is_separator;
    std::vector<std::size_t> separator_positions;
    std::size_t question_length = 0;
};

// Cells sorted top-left to bottom-right: row bands group cells whose
// vertical centers differ by less than half the median cell height, then
// left to right within a band. Equal keys keep input order.
SerializedDoc serialize_cells(const std::vector<std::string>& question_tokens,
                              const std::vector<OcrCell>& cells);

// Splits a serialized doc back into per-cell word sequences.
std::vector<std::vector<std::string>> split_cells(const SerializedDoc& doc);

struct SpanPrediction {
    std::string answer;
    std::size_t start = 0, end = 0; // token positions, inclusive
    double score = 0.0;
    bool empty = false; // no valid span existed
};

// Highest-scoring span with start <= end, length <= max_length, restricted
// to cell tokens (questions and separators are not eligible endpoints).
// Separators inside the chosen span are dropped from the answer text.
SpanPrediction predict_span(const SerializedDoc& doc, const std::vector<double>& start_logits,
                            const std::vector<double>& end_logits,
                            std::size_t max_length = 30);

// Lowercase, collapse whitespace, strip surrounding punctuation.
std::string normalize_for_anls(const std::string& s);

std::size_t edit_distance(const std::string& a, const std::string& b);

// Similarity of one prediction/ground-truth pair: 1 - NL when the
// normalized Levenshtein distance NL < 0.5, else 0.
double anls_pair(const std::string& prediction, const std::string& ground_truth);

// Max over ground truths; dataset-level ANLS is the mean of this over
// questions. Two empty strings compare equal (similarity 1).
double anls(const std::string& prediction, const std::vector<std::string>& ground_truths);

// JSONL records {question, cells: [{words:[...], box:[x1,y1,x2,y2]}], answers:[...]}.
struct OcrRecord {
    std::string question;
    std::vector<OcrCell> cells;
    std::vector<std::string> answers;
};

std::vector<OcrRecord> load_ocr_jsonl(const std::string& path);
void save_ocr_jsonl(const std::string& path, const std::vector<OcrRecord>& records);

} // namespace vqamoe::text_expert
