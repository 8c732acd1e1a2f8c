#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

namespace vqamoe::vqa_metric {

enum class AnswerType { yes_no, number, other };

std::string answer_type_name(AnswerType t);
AnswerType answer_type_from_name(const std::string& s);

// One VQA question with its ten human annotations.
struct AnnotationRecord {
    std::string question_id;
    std::string question;
    AnswerType answer_type = AnswerType::other;
    std::vector<std::string> answers; // exactly 10

    void validate() const;
};

// lowercase, trim, collapse whitespace, strip surrounding punctuation,
// drop leading articles, spell digits zero..ten as numerals.
std::string normalize_answer(const std::string& raw);

// Consensus accuracy min(#matches/3, 1) averaged over all ten
// leave-one-annotator-out subsets. Closed form in the match count k:
// (k*min((k-1)/3,1) + (10-k)*min(k/3,1)) / 10.
double accuracy(const std::string& answer, const AnnotationRecord& record);

// The same average computed by explicit enumeration of the ten subsets;
// kept as an independent oracle for the closed form.
double accuracy_brute_force(const std::string& answer, const AnnotationRecord& record);

// Per distinct normalized annotation, its consensus score; the soft
// targets for the VQA classification head.
std::map<std::string, double> soft_targets(const AnnotationRecord& record);

struct EvalReport {
    double overall = 0.0;
    std::map<std::string, double> per_type;        // type name -> mean accuracy
    std::map<std::string, std::size_t> type_counts;
    std::size_t total_questions = 0;
    std::size_t missing_predictions = 0;
};

// Missing predictions score 0 and are counted (with the report flagging
// how many); duplicate question ids are an error.
EvalReport evaluate(const std::map<std::string, std::string>& predictions,
                    const std::vector<AnnotationRecord>& records);

std::string report_table(const EvalReport& report);

std::vector<AnnotationRecord> load_annotations_jsonl(const std::string& path);
void save_annotations_jsonl(const std::string& path,
                            const std::vector<AnnotationRecord>& records);
std::map<std::string, std::string> load_predictions_jsonl(const std::string& path);
void save_predictions_jsonl(const std::string& path,
                            const std::map<std::string, std::string>& predictions);

} // namespace vqamoe::vqa_metric
