#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "flowattn/error.hpp"
#include "flowattn/tasks.hpp"
#include "json.hpp"

using namespace flowattn;

namespace {

// Stack evaluator over the whitespace-separated text form.
int evaluate_text(const std::string& text) {
  std::string spaced;
  for (char c : text) {
    if (c == ']') spaced += " ] ";
    else spaced += c;
  }
  std::istringstream in(spaced);
  std::vector<std::pair<std::string, std::vector<int>>> stack;
  std::string word;
  int result = -1;
  while (in >> word) {
    if (word[0] == '[') {
      stack.push_back({word, {}});
    } else if (word == "]") {
      auto [op, args] = stack.back();
      stack.pop_back();
      std::sort(args.begin(), args.end());
      int v = 0;
      if (op == "[MIN") v = args.front();
      if (op == "[MAX") v = args.back();
      if (op == "[MED") v = args[(args.size() - 1) / 2];
      if (op == "[SM") {
        for (int a : args) v = (v + a) % 10;
      }
      if (stack.empty()) result = v;
      else stack.back().second.push_back(v);
    } else {
      stack.back().second.push_back(std::stoi(word));
    }
  }
  return result;
}

std::size_t nesting_depth(std::span<const std::int64_t> ids) {
  std::size_t depth = 0, worst = 0;
  for (std::int64_t id : ids) {
    if (id >= kOpMin && id <= kOpSumMod) worst = std::max(worst, ++depth);
    if (id == kClose) --depth;
  }
  return worst;
}

}  // namespace

TEST_CASE("copy task fixture") {
  const TaskBatch b = gen_copy_task(3, 1, 3, 5);
  REQUIRE(b.inputs.size() == 3);
  const std::int64_t t = b.inputs[0];
  CHECK(t >= 2);
  CHECK(t < 5);
  CHECK(b.inputs == std::vector<std::int64_t>{t, kCopySep, kCopyPad});
  CHECK(b.targets == std::vector<std::int64_t>{0, 0, t});
  CHECK(b.loss_mask == std::vector<std::uint8_t>{0, 0, 1});
  CHECK(b.causal);
}

TEST_CASE("copy task structure") {
  const TaskBatch a = gen_copy_task(9, 8, 11, 10), b = gen_copy_task(9, 8, 11, 10);
  CHECK(a.inputs == b.inputs);
  CHECK(a.targets == b.targets);
  CHECK_FALSE(a.inputs == gen_copy_task(10, 8, 11, 10).inputs);
  for (std::size_t r = 0; r < 8; ++r) {
    const auto mask = a.mask_row(r);
    CHECK(std::count(mask.begin(), mask.end(), 1) == 5);
    for (std::size_t k = 0; k < 5; ++k) CHECK(a.target_row(r)[6 + k] == a.row(r)[k]);
    for (std::size_t i = 0; i < 11; ++i)
      if (!mask[i]) CHECK(a.target_row(r)[i] == 0);
  }
  CHECK_THROWS_AS(gen_copy_task(1, 1, 10, 10), ContractError);
  CHECK_THROWS_AS(gen_copy_task(1, 1, 11, 3), ContractError);
}

TEST_CASE("listops hand examples") {
  CHECK(evaluate_listops(tokenize_listops("[MAX 1 2 3]")) == 3);
  CHECK(evaluate_listops(tokenize_listops("[SM 9 9]")) == 8);
  CHECK(evaluate_listops(tokenize_listops("[MED 4 1 9 2]")) == 2);
  CHECK(evaluate_listops(tokenize_listops("[MIN 7 [MAX 0 5] 6]")) == 5);
  CHECK(detokenize_listops(tokenize_listops("[MIN 7 [MAX 0 5] 6]")) == "[MIN 7 [MAX 0 5] 6]");
  CHECK_THROWS_AS(tokenize_listops("[POW 2 3]"), DataError);
  CHECK_THROWS_AS(evaluate_listops(tokenize_listops("[MAX 1 2")), DataError);
}

TEST_CASE("listops generator agrees with the text evaluator") {
  std::size_t checked = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const TaskBatch b = gen_listops_mini(seed, 100, 3, 128);
    CHECK_FALSE(b.per_token);
    CHECK_FALSE(b.causal);
    for (std::size_t r = 0; r < b.batch; ++r) {
      const auto ids = b.row(r);
      CHECK(ids.size() <= 128);
      CHECK(nesting_depth(ids) <= 3);
      CHECK(b.targets[r] == evaluate_text(detokenize_listops(ids)));
      for (std::size_t i = ids.size(); i < b.width; ++i) CHECK(b.inputs[r * b.width + i] == kListPad);
      ++checked;
    }
  }
  CHECK(checked == 1000);
  CHECK(gen_listops_mini(4, 16, 2, 32).inputs == gen_listops_mini(4, 16, 2, 32).inputs);
  CHECK_THROWS_AS(gen_listops_mini(0, 1, 3, 600), ContractError);
}

TEST_CASE("char lm pipeline") {
  const std::string as(200, 'a');
  const CharCorpus single = char_lm_from_text(as, 10, 0.9);
  CHECK(single.vocab.size() == 3);

  std::string text;
  for (int i = 0; i < 40; ++i) text += "flow conservation, héllo! ";
  const CharCorpus c = char_lm_from_text(text, 16, 0.75);
  CHECK(c.vocab.detokenize(c.vocab.tokenize(text)) == text);
  CHECK(c.train.windows() == static_cast<std::size_t>(std::floor(text.size() * 0.75 / 16)));

  const std::size_t ids[] = {0, 1};
  const TaskBatch b = c.train.batch(ids);
  CHECK(b.inputs[0] == kCharBos);
  CHECK(b.inputs[1] == b.targets[0]);
  CHECK(b.inputs[16] == kCharBos);
  CHECK(std::count(b.loss_mask.begin(), b.loss_mask.end(), 1) == 32);

  try {
    char_lm_from_text(std::string(50, 'x'), 10, 0.9);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("100") != std::string::npos);
  }
  CHECK_THROWS_AS(char_lm_from_text(std::string(200, '\xff'), 10, 0.9), DataError);

  const auto path = std::filesystem::temp_directory_path() / "flowattn_test_corpus.txt";
  {
    std::ofstream out(path, std::ios::binary);
    out << text;
  }
  CHECK(load_char_lm(path, 16, 0.75).train.windows() == c.train.windows());
  std::filesystem::remove(path);
}

TEST_CASE("jsonl export") {
  const TaskBatch b = gen_listops_mini(1, 3, 2, 24);
  std::ostringstream out;
  write_jsonl(b, out);
  std::istringstream lines(out.str());
  std::string line;
  std::size_t r = 0;
  while (std::getline(lines, line)) {
    const auto j = nlohmann::json::parse(line);
    CHECK(j.at("target").get<std::int64_t>() == b.targets[r]);
    CHECK(j.at("input").size() == b.lengths[r]);
    ++r;
  }
  CHECK(r == 3);
}

TEST_CASE("task objects") {
  TaskParams p;
  p.kind = TaskKind::kListOps;
  p.max_depth = 2;
  p.max_len = 32;
  p.eval_samples = 50;
  const auto task = make_task(p);
  CHECK(task->num_classes() == 10);
  const auto eval = task->eval_batches(16);
  CHECK(eval.size() == 4);
  CHECK(eval.back().batch == 2);
  CHECK(task->eval_batches(16)[1].inputs == eval[1].inputs);
  CHECK(parse_task_kind("char-lm") == TaskKind::kCharLm);
  CHECK_THROWS_AS(parse_task_kind("wikitext"), ContractError);
}
