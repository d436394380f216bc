#include "tog/language.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

#include "tog/errors.hpp"

namespace tog {

namespace {

const std::string kObjSlot = "{obj}";
const std::string kTaskSlot = "{task}";

// Replace the first occurrence of `what`; returns false if absent.
bool replace_first(std::string& s, const std::string& what, const std::string& with) {
    const std::size_t at = s.find(what);
    if (at == std::string::npos) return false;
    s.replace(at, what.size(), with);
    return true;
}

}  // namespace

int Vocabulary::id_of(const std::string& token) const {
    const auto it = token_to_id.find(token);
    return it == token_to_id.end() ? kUnknown : it->second;
}

std::vector<std::string> load_templates(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open template file '" + path + "'");
    std::vector<std::string> templates;
    std::string line;
    while (std::getline(in, line)) {
        while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        if (line.find(kObjSlot) == std::string::npos || line.find(kTaskSlot) == std::string::npos) {
            throw ConfigError("template missing {obj} or {task}: '" + line + "'");
        }
        templates.push_back(line);
    }
    if (templates.empty()) throw ConfigError("template file '" + path + "' has no templates");
    return templates;
}

std::vector<std::string> normalize_words(const std::string& text) {
    std::string clean;
    clean.reserve(text.size());
    for (char ch : text) {
        const unsigned char u = static_cast<unsigned char>(ch);
        if (std::isalnum(u)) {
            clean.push_back(static_cast<char>(std::tolower(u)));
        } else if (std::isspace(u) || std::ispunct(u)) {
            // punctuation acts as a separator so "cut," still yields "cut"
            clean.push_back(' ');
        }
    }
    std::istringstream ss(clean);
    std::vector<std::string> words;
    std::string w;
    while (ss >> w) words.push_back(w);
    return words;
}

Vocabulary build_vocab(const std::vector<std::string>& templates,
                       const std::vector<std::string>& task_labels,
                       const std::vector<std::string>& category_labels) {
    if (templates.empty() || task_labels.empty() || category_labels.empty()) {
        throw ConfigError("build_vocab: templates, tasks and categories must be non-empty");
    }
    std::set<std::string> tokens;  // sorted insertion keeps ids deterministic
    auto absorb = [&tokens](const std::string& text) {
        for (const std::string& w : normalize_words(text)) tokens.insert(w);
    };
    for (const std::string& t : templates) {
        std::string stripped = t;
        replace_first(stripped, kObjSlot, " ");
        replace_first(stripped, kTaskSlot, " ");
        absorb(stripped);
    }
    // Label words enter directly so held-out categories stay in-vocabulary
    // even when no training sentence ever mentioned them.
    for (const std::string& t : task_labels) absorb(t);
    for (const std::string& c : category_labels) absorb(c);
    absorb("something");

    Vocabulary vocab;
    vocab.id_to_token = {"<pad>", "<unk>"};
    for (const std::string& t : tokens) {
        vocab.token_to_id.emplace(t, vocab.size());
        vocab.id_to_token.push_back(t);
    }
    return vocab;
}

std::vector<int> tokenize(const std::string& text, const Vocabulary& vocab, int t_max) {
    if (t_max < 4) throw ConfigError("tokenize: T_max must be >= 4");
    const std::vector<std::string> words = normalize_words(text);
    if (words.empty()) throw ConfigError("tokenize: empty text");
    std::vector<int> ids(static_cast<std::size_t>(t_max), Vocabulary::kPad);
    const std::size_t n = std::min<std::size_t>(words.size(), static_cast<std::size_t>(t_max));
    for (std::size_t i = 0; i < n; ++i) ids[i] = vocab.id_of(words[i]);
    return ids;
}

std::string detokenize(const std::vector<int>& ids, const Vocabulary& vocab) {
    std::string out;
    for (int id : ids) {
        if (id == Vocabulary::kPad) break;
        if (id < 0 || id >= vocab.size()) {
            throw IndexError("detokenize: id " + std::to_string(id) + " out of range");
        }
        if (!out.empty()) out.push_back(' ');
        out += vocab.id_to_token[static_cast<std::size_t>(id)];
    }
    return out;
}

Instruction generate_instruction(const std::vector<std::string>& templates,
                                 const std::string& target_task,
                                 const std::optional<std::string>& target_object, Rng& rng,
                                 const Vocabulary& vocab, int t_max) {
    if (templates.empty()) throw ConfigError("generate_instruction: no templates");
    auto label_known = [&vocab](const std::string& label) {
        const std::vector<std::string> words = normalize_words(label);
        if (words.empty()) return false;
        for (const std::string& w : words)
            if (vocab.id_of(w) == Vocabulary::kUnknown) return false;
        return true;
    };
    if (!label_known(target_task)) {
        throw ConfigError("generate_instruction: unknown task label '" + target_task + "'");
    }
    if (target_object && !label_known(*target_object)) {
        throw ConfigError("generate_instruction: unknown object label '" + *target_object + "'");
    }

    std::string text = templates[static_cast<std::size_t>(rng.below(static_cast<int>(templates.size())))];
    if (target_object) {
        replace_first(text, kObjSlot, *target_object);
    } else {
        // Task-only form: swallow the article along with the slot.
        if (!replace_first(text, "the " + kObjSlot, "something") &&
            !replace_first(text, "a " + kObjSlot, "something") &&
            !replace_first(text, "an " + kObjSlot, "something")) {
            replace_first(text, kObjSlot, "something");
        }
    }
    replace_first(text, kTaskSlot, target_task);
    std::transform(text.begin(), text.end(), text.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });

    Instruction instr;
    instr.text = text;
    instr.target_task = target_task;
    instr.target_object = target_object;
    instr.token_ids = tokenize(text, vocab, t_max);
    return instr;
}

}  // namespace tog
