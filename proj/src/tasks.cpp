// Copyright 2026 The flowattn Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "flowattn/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <sstream>

#include "json.hpp"

#include "flowattn/error.hpp"
#include "flowattn/rng.hpp"

namespace flowattn {

namespace {

// Held-out generators draw from a seed space disjoint from training steps.
constexpr std::uint64_t kEvalSeed = 0x5eed'e7a1'0000'0001ULL;

TaskBatch make_batch(std::size_t batch, std::size_t width, bool per_token, bool causal) {
  TaskBatch b;
  b.batch = batch;
  b.width = width;
  b.inputs.assign(batch * width, 0);
  b.targets.assign(per_token ? batch * width : batch, 0);
  b.loss_mask.assign(batch * width, 0);
  b.lengths.assign(batch, width);
  b.per_token = per_token;
  b.causal = causal;
  return b;
}

}  // namespace

void write_jsonl(const TaskBatch& batch, std::ostream& out) {
  for (std::size_t b = 0; b < batch.batch; ++b) {
    nlohmann::json row;
    const auto in = batch.row(b);
    const auto mask = batch.mask_row(b);
    row["input"] = std::vector<std::int64_t>(in.begin(), in.end());
    if (batch.per_token) {
      const auto t = batch.target_row(b);
      row["target"] = std::vector<std::int64_t>(t.begin(), t.end());
    } else {
      row["target"] = batch.targets[b];
    }
    row["mask"] = std::vector<int>(mask.begin(), mask.end());
    out << row.dump() << '\n';
  }
}

// ---------------------------------------------------------------------------
// Copy task

TaskBatch gen_copy_task(std::uint64_t seed, std::size_t batch, std::size_t seq_len, std::size_t vocab) {
  if (vocab < 4) throw ContractError("copy task: vocab must be >= 4, got " + std::to_string(vocab));
  if (seq_len < 3 || seq_len % 2 == 0) {
    throw ContractError("copy task: seq_len must be odd and >= 3 (run + separator + run), got " +
                        std::to_string(seq_len));
  }
  if (batch == 0) throw ContractError("copy task: batch must be >= 1");
  const std::size_t run = (seq_len - 1) / 2;
  Rng rng(seed);
  TaskBatch out = make_batch(batch, seq_len, true, true);
  for (std::size_t b = 0; b < batch; ++b) {
    std::int64_t* in = out.inputs.data() + b * seq_len;
    std::int64_t* tg = out.targets.data() + b * seq_len;
    std::uint8_t* mk = out.loss_mask.data() + b * seq_len;
    for (std::size_t k = 0; k < run; ++k) {
      const auto tok = static_cast<std::int64_t>(2 + rng.below(vocab - 2));
      in[k] = tok;
      tg[run + 1 + k] = tok;
      mk[run + 1 + k] = 1;
    }
    in[run] = kCopySep;
  }
  return out;
}

// ---------------------------------------------------------------------------
// ListOps-mini

namespace {

constexpr std::string_view kOpNames[] = {"[MIN", "[MAX", "[MED", "[SM"};

void emit_expression(Rng& rng, std::size_t depth, std::size_t max_depth, std::vector<std::int64_t>& out) {
  const bool leaf = depth > 0 && (depth >= max_depth || rng.uniform() < 0.4);
  if (leaf) {
    out.push_back(kDigit0 + static_cast<std::int64_t>(rng.below(10)));
    return;
  }
  out.push_back(kOpMin + static_cast<std::int64_t>(rng.below(4)));
  const std::size_t args = 2 + rng.below(4);
  for (std::size_t a = 0; a < args; ++a) emit_expression(rng, depth + 1, max_depth, out);
  out.push_back(kClose);
}

int eval_at(std::span<const std::int64_t> ids, std::size_t& pos) {
  if (pos >= ids.size()) throw DataError("listops: unexpected end of expression");
  const std::int64_t tok = ids[pos++];
  if (tok >= kDigit0 && tok < kDigit0 + 10) return static_cast<int>(tok - kDigit0);
  if (tok < kOpMin || tok > kOpSumMod) throw DataError("listops: unexpected token id " + std::to_string(tok));
  std::vector<int> args;
  while (pos < ids.size() && ids[pos] != kClose) args.push_back(eval_at(ids, pos));
  if (pos >= ids.size()) throw DataError("listops: missing ']'");
  ++pos;
  if (args.empty()) throw DataError("listops: operator without arguments");
  switch (tok) {
    case kOpMin: return *std::min_element(args.begin(), args.end());
    case kOpMax: return *std::max_element(args.begin(), args.end());
    case kOpMed: {
      std::sort(args.begin(), args.end());
      return args[(args.size() - 1) / 2];
    }
    default: {
      int s = 0;
      for (int a : args) s += a;
      return s % 10;
    }
  }
}

}  // namespace

std::vector<std::int64_t> tokenize_listops(std::string_view text) {
  std::vector<std::int64_t> ids;
  std::istringstream in{std::string(text)};
  std::string word;
  while (in >> word) {
    // A trailing "]" may be glued to a digit or another "]".
    std::size_t closes = 0;
    while (!word.empty() && word.back() == ']' && word != "]") {
      word.pop_back();
      ++closes;
    }
    if (word == "]") {
      ids.push_back(kClose);
    } else if (word.size() == 1 && word[0] >= '0' && word[0] <= '9') {
      ids.push_back(kDigit0 + (word[0] - '0'));
    } else {
      const auto it = std::find(std::begin(kOpNames), std::end(kOpNames), word);
      if (it == std::end(kOpNames)) throw DataError("listops: unknown word '" + word + "'");
      ids.push_back(kOpMin + (it - std::begin(kOpNames)));
    }
    for (std::size_t c = 0; c < closes; ++c) ids.push_back(kClose);
  }
  return ids;
}

std::string detokenize_listops(std::span<const std::int64_t> ids) {
  std::string out;
  for (std::int64_t id : ids) {
    if (id == kListPad) continue;
    if (id == kClose) {
      out += "]";
      continue;
    }
    if (!out.empty()) out += ' ';
    if (id >= kDigit0 && id < kDigit0 + 10) {
      out += static_cast<char>('0' + (id - kDigit0));
    } else if (id >= kOpMin && id <= kOpSumMod) {
      out += kOpNames[id - kOpMin];
    } else {
      throw DataError("listops: unknown token id " + std::to_string(id));
    }
  }
  return out;
}

int evaluate_listops(std::span<const std::int64_t> ids) {
  std::size_t pos = 0;
  const int value = eval_at(ids, pos);
  if (pos != ids.size()) throw DataError("listops: trailing tokens after expression");
  return value;
}

TaskBatch gen_listops_mini(std::uint64_t seed, std::size_t batch, std::size_t max_depth, std::size_t max_len) {
  if (max_len > 512) throw ContractError("listops: max_len must be <= 512");
  if (max_len < 4) throw ContractError("listops: max_len must be >= 4 to hold one operator");
  if (max_depth < 1) throw ContractError("listops: max_depth must be >= 1");
  if (batch == 0) throw ContractError("listops: batch must be >= 1");
  Rng rng(seed);
  std::vector<std::vector<std::int64_t>> rows;
  std::size_t width = 0;
  while (rows.size() < batch) {
    std::vector<std::int64_t> expr;
    emit_expression(rng, 0, max_depth, expr);
    if (expr.size() > max_len) continue;
    width = std::max(width, expr.size());
    rows.push_back(std::move(expr));
  }
  TaskBatch out = make_batch(batch, width, false, false);
  for (std::size_t b = 0; b < batch; ++b) {
    std::copy(rows[b].begin(), rows[b].end(), out.inputs.begin() + static_cast<std::ptrdiff_t>(b * width));
    std::fill_n(out.loss_mask.begin() + static_cast<std::ptrdiff_t>(b * width), rows[b].size(), 1);
    out.lengths[b] = rows[b].size();
    out.targets[b] = evaluate_listops(rows[b]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Character LM

namespace {

bool valid_utf8(std::string_view s) {
  std::size_t i = 0;
  while (i < s.size()) {
    const auto c = static_cast<unsigned char>(s[i]);
    std::size_t extra = 0;
    std::uint32_t cp = 0;
    if (c < 0x80) {
      ++i;
      continue;
    } else if ((c & 0xE0) == 0xC0) {
      extra = 1;
      cp = c & 0x1F;
    } else if ((c & 0xF0) == 0xE0) {
      extra = 2;
      cp = c & 0x0F;
    } else if ((c & 0xF8) == 0xF0) {
      extra = 3;
      cp = c & 0x07;
    } else {
      return false;
    }
    if (i + extra >= s.size()) return false;
    for (std::size_t k = 1; k <= extra; ++k) {
      const auto cc = static_cast<unsigned char>(s[i + k]);
      if ((cc & 0xC0) != 0x80) return false;
      cp = (cp << 6) | (cc & 0x3F);
    }
    constexpr std::uint32_t kMin[] = {0, 0x80, 0x800, 0x10000};
    if (cp < kMin[extra] || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) return false;
    i += extra + 1;
  }
  return true;
}

}  // namespace

CharVocab::CharVocab(std::string_view corpus) {
  bool seen[256] = {};
  for (char ch : corpus) seen[static_cast<unsigned char>(ch)] = true;
  std::fill(std::begin(index_), std::end(index_), -1);
  for (int b = 0; b < 256; ++b) {
    if (!seen[b]) continue;
    index_[b] = static_cast<std::int64_t>(2 + bytes_.size());
    bytes_.push_back(static_cast<unsigned char>(b));
  }
}

std::vector<std::int64_t> CharVocab::tokenize(std::string_view text) const {
  std::vector<std::int64_t> ids;
  ids.reserve(text.size());
  for (char ch : text) {
    const std::int64_t id = index_[static_cast<unsigned char>(ch)];
    if (id < 0) throw DataError("char vocab: byte " + std::to_string(static_cast<unsigned char>(ch)) + " not in vocabulary");
    ids.push_back(id);
  }
  return ids;
}

std::string CharVocab::detokenize(std::span<const std::int64_t> ids) const {
  std::string out;
  for (std::int64_t id : ids) {
    if (id == kCharPad || id == kCharBos) continue;
    if (id < 2 || static_cast<std::size_t>(id) >= size()) throw DataError("char vocab: id " + std::to_string(id) + " out of range");
    out += static_cast<char>(bytes_[static_cast<std::size_t>(id - 2)]);
  }
  return out;
}

CharStream::CharStream(std::vector<std::int64_t> tokens, std::size_t seq_len)
    : tokens_(std::move(tokens)), seq_len_(seq_len) {
  if (seq_len_ == 0) throw ContractError("char stream: seq_len must be >= 1");
}

TaskBatch CharStream::batch(std::span<const std::size_t> window_ids) const {
  if (windows() == 0) throw DataError("char stream: no complete window of " + std::to_string(seq_len_) + " tokens");
  TaskBatch out = make_batch(window_ids.size(), seq_len_, true, true);
  for (std::size_t b = 0; b < window_ids.size(); ++b) {
    const std::size_t start = (window_ids[b] % windows()) * seq_len_;
    std::int64_t* in = out.inputs.data() + b * seq_len_;
    std::int64_t* tg = out.targets.data() + b * seq_len_;
    in[0] = kCharBos;
    for (std::size_t t = 0; t < seq_len_; ++t) {
      tg[t] = tokens_[start + t];
      if (t + 1 < seq_len_) in[t + 1] = tokens_[start + t];
    }
    std::fill_n(out.loss_mask.begin() + static_cast<std::ptrdiff_t>(b * seq_len_), seq_len_, 1);
  }
  return out;
}

CharCorpus char_lm_from_text(std::string_view text, std::size_t seq_len, double split_fraction) {
  if (seq_len == 0) throw ContractError("char lm: seq_len must be >= 1");
  if (!(split_fraction > 0.0 && split_fraction < 1.0)) throw ContractError("char lm: split must lie in (0, 1)");
  if (!valid_utf8(text)) throw DataError("char lm: corpus is not valid UTF-8");
  if (text.size() < 10 * seq_len) {
    throw DataError("char lm: corpus has " + std::to_string(text.size()) + " characters, need at least " +
                    std::to_string(10 * seq_len) + " (10 x seq_len)");
  }
  CharVocab vocab(text);
  std::vector<std::int64_t> ids = vocab.tokenize(text);
  const auto cut = static_cast<std::size_t>(std::floor(static_cast<double>(ids.size()) * split_fraction));
  std::vector<std::int64_t> tail(ids.begin() + static_cast<std::ptrdiff_t>(cut), ids.end());
  ids.resize(cut);
  return CharCorpus{std::move(vocab), CharStream(std::move(ids), seq_len), CharStream(std::move(tail), seq_len)};
}

CharCorpus load_char_lm(const std::filesystem::path& path, std::size_t seq_len, double split_fraction) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("char lm: cannot open " + path.string());
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return char_lm_from_text(text, seq_len, split_fraction);
}

// ---------------------------------------------------------------------------
// Task objects

std::string_view to_string(TaskKind k) {
  switch (k) {
    case TaskKind::kCopy: return "copy";
    case TaskKind::kListOps: return "listops";
    case TaskKind::kCharLm: return "char-lm";
  }
  return "unknown";
}

TaskKind parse_task_kind(std::string_view s) {
  if (s == "copy") return TaskKind::kCopy;
  if (s == "listops") return TaskKind::kListOps;
  if (s == "char-lm") return TaskKind::kCharLm;
  throw ContractError("unknown task '" + std::string(s) + "' (expected one of: copy, listops, char-lm)");
}

namespace {

std::vector<TaskBatch> chunked(std::size_t total, std::size_t batch, auto make) {
  std::vector<TaskBatch> out;
  for (std::size_t done = 0, i = 0; done < total; done += batch, ++i) out.push_back(make(i, std::min(batch, total - done)));
  return out;
}

class CopyTask final : public Task {
 public:
  explicit CopyTask(TaskParams p) : p_(std::move(p)) { gen_copy_task(0, 1, p_.seq_len, p_.vocab); }
  std::string_view name() const override { return "copy"; }
  std::size_t vocab_size() const override { return p_.vocab; }
  std::size_t max_seq_len() const override { return p_.seq_len; }
  std::size_t num_classes() const override { return 0; }
  bool requires_causal() const override { return false; }
  TaskBatch train_batch(std::uint64_t seed, std::size_t batch) const override {
    return gen_copy_task(seed, batch, p_.seq_len, p_.vocab);
  }
  std::vector<TaskBatch> eval_batches(std::size_t batch) const override {
    return chunked(p_.eval_samples, batch,
                   [&](std::size_t i, std::size_t b) { return gen_copy_task(kEvalSeed + i, b, p_.seq_len, p_.vocab); });
  }

 private:
  TaskParams p_;
};

class ListOpsTask final : public Task {
 public:
  explicit ListOpsTask(TaskParams p) : p_(std::move(p)) { gen_listops_mini(0, 1, p_.max_depth, p_.max_len); }
  std::string_view name() const override { return "listops"; }
  std::size_t vocab_size() const override { return kListOpsVocab; }
  std::size_t max_seq_len() const override { return p_.max_len; }
  std::size_t num_classes() const override { return kListOpsClasses; }
  bool requires_causal() const override { return false; }
  TaskBatch train_batch(std::uint64_t seed, std::size_t batch) const override {
    return gen_listops_mini(seed, batch, p_.max_depth, p_.max_len);
  }
  std::vector<TaskBatch> eval_batches(std::size_t batch) const override {
    return chunked(p_.eval_samples, batch, [&](std::size_t i, std::size_t b) {
      return gen_listops_mini(kEvalSeed + i, b, p_.max_depth, p_.max_len);
    });
  }

 private:
  TaskParams p_;
};

class CharLmTask final : public Task {
 public:
  explicit CharLmTask(TaskParams p)
      : p_(std::move(p)), corpus_(load_char_lm(p_.corpus, p_.seq_len, p_.split)) {
    if (corpus_.train.windows() == 0 || corpus_.eval.windows() == 0) {
      throw DataError("char lm: split leaves no complete window for training or evaluation");
    }
  }
  std::string_view name() const override { return "char-lm"; }
  std::size_t vocab_size() const override { return corpus_.vocab.size(); }
  std::size_t max_seq_len() const override { return p_.seq_len; }
  std::size_t num_classes() const override { return 0; }
  bool requires_causal() const override { return true; }
  TaskBatch train_batch(std::uint64_t seed, std::size_t batch) const override {
    Rng rng(seed);
    std::vector<std::size_t> ids(batch);
    for (auto& id : ids) id = static_cast<std::size_t>(rng.below(corpus_.train.windows()));
    return corpus_.train.batch(ids);
  }
  std::vector<TaskBatch> eval_batches(std::size_t batch) const override {
    const std::size_t total = std::min(p_.eval_samples, corpus_.eval.windows());
    return chunked(total, batch, [&](std::size_t i, std::size_t b) {
      std::vector<std::size_t> ids(b);
      for (std::size_t k = 0; k < b; ++k) ids[k] = i * batch + k;
      return corpus_.eval.batch(ids);
    });
  }

 private:
  TaskParams p_;
  CharCorpus corpus_;
};

}  // namespace

std::unique_ptr<Task> make_task(const TaskParams& params) {
  if (params.eval_samples == 0) throw ContractError("task: eval_samples must be >= 1");
  switch (params.kind) {
    case TaskKind::kCopy: return std::make_unique<CopyTask>(params);
    case TaskKind::kListOps: return std::make_unique<ListOpsTask>(params);
    case TaskKind::kCharLm: return std::make_unique<CharLmTask>(params);
  }
  throw ContractError("unknown task kind");
}

}  // namespace flowattn
