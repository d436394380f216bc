#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>

#include "tog/errors.hpp"
#include "tog/language.hpp"
#include "tog/rng.hpp"

using namespace tog;

namespace {

const std::vector<std::string> kTasks = {"cut", "scoop", "handover"};
const std::vector<std::string> kCats = {"knife", "spoon"};

Vocabulary test_vocab(const std::vector<std::string>& templates) {
    return build_vocab(templates, kTasks, kCats);
}

}  // namespace

TEST_CASE("template asset loads and every line carries both slots") {
    const auto templates = load_templates(std::string(TOG_ASSET_DIR) + "/templates.txt");
    CHECK(templates.size() == 33);  // 11 base forms, two paraphrases each
    for (const auto& t : templates) {
        CHECK(t.find("{obj}") != std::string::npos);
        CHECK(t.find("{task}") != std::string::npos);
    }
}

TEST_CASE("generate_instruction fills slots for both instruction forms") {
    const std::vector<std::string> templates = {"use the {obj} to {task}"};
    const Vocabulary vocab = test_vocab(templates);

    Rng rng(1);
    const Instruction obj_form =
        generate_instruction(templates, "cut", std::string("knife"), rng, vocab, 20);
    CHECK(obj_form.text == "use the knife to cut");
    CHECK(obj_form.target_task == "cut");
    REQUIRE(obj_form.target_object.has_value());
    CHECK(*obj_form.target_object == "knife");

    const Instruction task_form =
        generate_instruction(templates, "scoop", std::nullopt, rng, vocab, 20);
    CHECK(task_form.text == "use something to scoop");
    CHECK(task_form.text.find("knife") == std::string::npos);
    CHECK(task_form.text.find("spoon") == std::string::npos);
    CHECK_FALSE(task_form.target_object.has_value());
}

TEST_CASE("generate_instruction is deterministic under a fixed seed") {
    const auto templates = load_templates(std::string(TOG_ASSET_DIR) + "/templates.txt");
    const Vocabulary vocab = test_vocab(templates);
    Rng a(77), b(77);
    for (int i = 0; i < 20; ++i) {
        const Instruction ia = generate_instruction(templates, "cut", std::string("knife"), a, vocab, 20);
        const Instruction ib = generate_instruction(templates, "cut", std::string("knife"), b, vocab, 20);
        CHECK(ia.text == ib.text);
        CHECK(ia.token_ids == ib.token_ids);
    }
}

TEST_CASE("generate_instruction rejects unknown labels") {
    const std::vector<std::string> templates = {"use the {obj} to {task}"};
    const Vocabulary vocab = test_vocab(templates);
    Rng rng(1);
    CHECK_THROWS_AS(generate_instruction(templates, "weld", std::nullopt, rng, vocab, 20), ConfigError);
    CHECK_THROWS_AS(generate_instruction(templates, "cut", std::string("chainsaw"), rng, vocab, 20),
                    ConfigError);
}

TEST_CASE("tokenize: padding, unknowns, punctuation, round trip") {
    const std::vector<std::string> templates = {"use the {obj} to {task}"};
    const Vocabulary vocab = test_vocab(templates);

    const auto ids = tokenize("Use the knife to cut", vocab, 20);
    REQUIRE(ids.size() == 20);
    int nonpad = 0;
    for (int id : ids)
        if (id != Vocabulary::kPad) ++nonpad;
    CHECK(nonpad == 5);
    for (int i = 0; i < 5; ++i) CHECK(ids[i] != Vocabulary::kPad);
    for (int i = 5; i < 20; ++i) CHECK(ids[i] == Vocabulary::kPad);

    const auto unk = tokenize("use the zamboni to cut", vocab, 20);
    CHECK(unk[2] == Vocabulary::kUnknown);

    // punctuation and case wash out
    CHECK(tokenize("Use the knife, to cut!", vocab, 20) == ids);

    // round trip is the identity on pad-free prefixes
    const std::string text = "use the knife to cut";
    CHECK(detokenize(tokenize(text, vocab, 20), vocab) == text);
    CHECK(tokenize(detokenize(ids, vocab), vocab, 20) == ids);

    // truncation at T_max
    const auto longids = tokenize("use the knife to cut and cut and cut", vocab, 4);
    CHECK(longids.size() == 4);

    CHECK_THROWS_AS(tokenize("", vocab, 20), ConfigError);
    CHECK_THROWS_AS(tokenize("abc", vocab, 3), ConfigError);
}

TEST_CASE("build_vocab: determinism, label coverage, size accounting") {
    const auto templates = load_templates(std::string(TOG_ASSET_DIR) + "/templates.txt");
    const Vocabulary v1 = build_vocab(templates, kTasks, kCats);
    const Vocabulary v2 = build_vocab(templates, kTasks, kCats);
    CHECK(v1.id_to_token == v2.id_to_token);

    // every task and category label tokenizes without unknowns
    for (const auto& label : kTasks) CHECK(v1.id_of(label) != Vocabulary::kUnknown);
    for (const auto& label : kCats) CHECK(v1.id_of(label) != Vocabulary::kUnknown);
    CHECK(v1.id_of("something") != Vocabulary::kUnknown);

    // vocab size == distinct tokens + 2 reserved ids
    std::set<std::string> distinct;
    auto absorb = [&](const std::string& text) {
        for (const auto& w : normalize_words(text)) distinct.insert(w);
    };
    for (auto t : templates) {
        for (const char* slot : {"{obj}", "{task}"}) {
            const auto at = t.find(slot);
            if (at != std::string::npos) t.replace(at, std::string(slot).size(), " ");
        }
        absorb(t);
    }
    for (const auto& l : kTasks) absorb(l);
    for (const auto& l : kCats) absorb(l);
    absorb("something");
    CHECK(v1.size() == static_cast<int>(distinct.size()) + 2);

    CHECK_THROWS_AS(build_vocab({}, kTasks, kCats), ConfigError);
}
