#include "vqamoe/vqa_metric.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace vqamoe::vqa_metric {

std::string answer_type_name(AnswerType t) {
    switch (t) {
        case AnswerType::yes_no: return "yes/no";
        case AnswerType::number: return "number";
        case AnswerType::other: return "other";
    }
    return "other";
}

AnswerType answer_type_from_name(const std::string& s) {
    if (s == "yes/no") return AnswerType::yes_no;
    if (s == "number") return AnswerType::number;
    if (s == "other") return AnswerType::other;
    throw std::invalid_argument("unknown answer type: " + s);
}

void AnnotationRecord::validate() const {
    if (answers.size() != 10) {
        throw std::invalid_argument("AnnotationRecord '" + question_id + "': expected 10 answers, got " +
                                    std::to_string(answers.size()));
    }
}

std::string normalize_answer(const std::string& raw) {
    std::string lowered;
    for (char ch : raw) {
        lowered.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    }

    // Tokenize on whitespace, stripping surrounding punctuation per token.
    std::vector<std::string> tokens;
    std::string cur;
    auto flush = [&] {
        std::size_t b = 0, e = cur.size();
        while (b < e && std::ispunct(static_cast<unsigned char>(cur[b]))) ++b;
        while (e > b && std::ispunct(static_cast<unsigned char>(cur[e - 1]))) --e;
        std::string t = cur.substr(b, e - b);
        if (!t.empty()) tokens.push_back(t);
        cur.clear();
    };
    for (char ch : lowered) {
        if (std::isspace(static_cast<unsigned char>(ch))) {
            flush();
        } else {
            cur.push_back(ch);
        }
    }
    flush();

    static const std::map<std::string, std::string> digits = {
        {"zero", "0"}, {"one", "1"}, {"two", "2"},   {"three", "3"}, {"four", "4"},
        {"five", "5"}, {"six", "6"}, {"seven", "7"}, {"eight", "8"}, {"nine", "9"},
        {"ten", "10"}};

    std::string out;
    bool first = true;
    for (const std::string& t : tokens) {
        if (first && tokens.size() > 1 && (t == "a" || t == "an" || t == "the")) {
            first = false;
            continue;
        }
        first = false;
        auto it = digits.find(t);
        if (!out.empty()) out += ' ';
        out += (it != digits.end() ? it->second : t);
    }
    return out;
}

double accuracy(const std::string& answer, const AnnotationRecord& record) {
    record.validate();
    const std::string norm = normalize_answer(answer);
    int k = 0;
    for (const std::string& a : record.answers) {
        if (normalize_answer(a) == norm) ++k;
    }
    // Dropping a matching annotator leaves k-1 matches; dropping any other
    // leaves k. Averaged over the ten drops. Kept as an integer numerator over
    // 30 so the result is exact.
    const int num = k * std::min(std::max(k - 1, 0), 3) + (10 - k) * std::min(k, 3);
    return static_cast<double>(num) / 30.0;
}

double accuracy_brute_force(const std::string& answer, const AnnotationRecord& record) {
    record.validate();
    const std::string norm = normalize_answer(answer);
    std::vector<bool> match;
    for (const std::string& a : record.answers) match.push_back(normalize_answer(a) == norm);

    int num = 0;
    for (std::size_t drop = 0; drop < 10; ++drop) {
        int count = 0;
        for (std::size_t i = 0; i < 10; ++i) {
            if (i != drop && match[i]) ++count;
        }
        num += std::min(count, 3);
    }
    return static_cast<double>(num) / 30.0;
}

std::map<std::string, double> soft_targets(const AnnotationRecord& record) {
    record.validate();
    std::map<std::string, double> out;
    for (const std::string& a : record.answers) {
        const std::string n = normalize_answer(a);
        if (!out.count(n)) out[n] = accuracy(a, record);
    }
    return out;
}

EvalReport evaluate(const std::map<std::string, std::string>& predictions,
                    const std::vector<AnnotationRecord>& records) {
    EvalReport report;
    std::map<std::string, bool> seen;
    std::map<std::string, double> type_sum;
    for (const AnnotationRecord& r : records) {
        if (seen[r.question_id]) {
            throw std::invalid_argument("evaluate: duplicate question id " + r.question_id);
        }
        seen[r.question_id] = true;
        double acc = 0.0;
        auto it = predictions.find(r.question_id);
        if (it == predictions.end()) {
            ++report.missing_predictions;
        } else {
            acc = accuracy(it->second, r);
        }
        const std::string type = answer_type_name(r.answer_type);
        type_sum[type] += acc;
        ++report.type_counts[type];
        ++report.total_questions;
    }
    double total = 0.0;
    for (auto& [type, s] : type_sum) {
        report.per_type[type] = s / static_cast<double>(report.type_counts[type]);
        total += s;
    }
    report.overall =
        report.total_questions ? total / static_cast<double>(report.total_questions) : 0.0;
    return report;
}

std::string report_table(const EvalReport& report) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(4);
    os << std::left << std::setw(10) << "type" << std::right << std::setw(10) << "count"
       << std::setw(12) << "accuracy" << "\n";
    for (const auto& [type, acc] : report.per_type) {
        os << std::left << std::setw(10) << type << std::right << std::setw(10)
           << report.type_counts.at(type) << std::setw(12) << acc << "\n";
    }
    os << std::left << std::setw(10) << "overall" << std::right << std::setw(10)
       << report.total_questions << std::setw(12) << report.overall << "\n";
    if (report.missing_predictions > 0) {
        os << "warning: " << report.missing_predictions << " questions had no prediction\n";
    }
    return os.str();
}

// ---- JSONL ------------------------------------------------------------

std::vector<AnnotationRecord> load_annotations_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open annotations file: " + path);
    std::vector<AnnotationRecord> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto j = nlohmann::json::parse(line);
        AnnotationRecord r;
        r.question_id = j.at("question_id").get<std::string>();
        r.question = j.at("question").get<std::string>();
        r.answer_type = answer_type_from_name(j.at("answer_type").get<std::string>());
        r.answers = j.at("answers").get<std::vector<std::string>>();
        r.validate();
        out.push_back(std::move(r));
    }
    return out;
}

void save_annotations_jsonl(const std::string& path,
                            const std::vector<AnnotationRecord>& records) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write annotations file: " + path);
    for (const auto& r : records) {
        r.validate();
        nlohmann::json j{{"question_id", r.question_id},
                         {"question", r.question},
                         {"answer_type", answer_type_name(r.answer_type)},
                         {"answers", r.answers}};
        out << j.dump() << "\n";
    }
}

std::map<std::string, std::string> load_predictions_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open predictions file: " + path);
    std::map<std::string, std::string> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto j = nlohmann::json::parse(line);
        out[j.at("question_id").get<std::string>()] = j.at("answer").get<std::string>();
    }
    return out;
}

void save_predictions_jsonl(const std::string& path,
                            const std::map<std::string, std::string>& predictions) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write predictions file: " + path);
    for (const auto& [id, answer] : predictions) {
        nlohmann::json j{{"question_id", id}, {"answer", answer}};
        out << j.dump() << "\n";
    }
}

} // namespace vqamoe::vqa_metric
