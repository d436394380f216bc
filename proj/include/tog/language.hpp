#pragma once

#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "tog/rng.hpp"

namespace tog {

/// A task command and its structured ground truth. The (target_task,
/// target_object) pair travels with the text so evaluation never has to
/// parse the sentence back.
struct Instruction {
    std::string text;
    std::string target_task;
    std::optional<std::string> target_object;  // absent for task-only form
    std::vector<int> token_ids;                // length T_max, pad id 0
};

/// Token table with reserved ids 0 (pad) and 1 (unknown). Built
/// deterministically by sorted insertion.
struct Vocabulary {
    static constexpr int kPad = 0;
    static constexpr int kUnknown = 1;

    std::unordered_map<std::string, int> token_to_id;
    std::vector<std::string> id_to_token;  // index == id

    int size() const { return static_cast<int>(id_to_token.size()); }
    int id_of(const std::string& token) const;
};

/// Reads a template file: one template per line, '#' lines are comments.
/// Every template must mention {obj} and {task}.
std::vector<std::string> load_templates(const std::string& path);

/// Lowercase, strip punctuation, split on whitespace.
std::vector<std::string> normalize_words(const std::string& text);

Vocabulary build_vocab(const std::vector<std::string>& templates,
                       const std::vector<std::string>& task_labels,
                       const std::vector<std::string>& category_labels);

std::vector<int> tokenize(const std::string& text, const Vocabulary& vocab, int t_max);
std::string detokenize(const std::vector<int>& ids, const Vocabulary& vocab);

/// Uniform template choice; {obj} becomes "the <object>" or "something".
Instruction generate_instruction(const std::vector<std::string>& templates,
                                 const std::string& target_task,
                                 const std::optional<std::string>& target_object, Rng& rng,
                                 const Vocabulary& vocab, int t_max);

}  // namespace tog
