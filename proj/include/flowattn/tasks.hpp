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

// Synthetic tasks and the character-level corpus pipeline. Every generator
// is a pure function of its seed and parameters.

#ifndef FLOWATTN_TASKS_HPP_
#define FLOWATTN_TASKS_HPP_

#include <cstdint>
#include <filesystem>
#include <memory>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace flowattn {

// Row-major batch x width id grids. Rows shorter than `width` are padded
// with id 0 and mask 0; lengths[b] is the unpadded length of row b.
// targets is batch x width for per-token tasks and batch for classification.
struct TaskBatch {
  std::size_t batch = 0;
  std::size_t width = 0;
  std::vector<std::int64_t> inputs;
  std::vector<std::int64_t> targets;
  std::vector<std::uint8_t> loss_mask;
  std::vector<std::size_t> lengths;
  bool causal = false;
  bool per_token = true;

  std::span<const std::int64_t> row(std::size_t b) const { return {inputs.data() + b * width, lengths[b]}; }
  std::span<const std::int64_t> target_row(std::size_t b) const { return {targets.data() + b * width, lengths[b]}; }
  std::span<const std::uint8_t> mask_row(std::size_t b) const { return {loss_mask.data() + b * width, lengths[b]}; }
};

// One JSON object per sample: {"input": [...], "target": ..., "mask": [...]}.
void write_jsonl(const TaskBatch& batch, std::ostream& out);

// ---------------------------------------------------------------------------
// Copy task
// ---------------------------------------------------------------------------

inline constexpr std::int64_t kCopyPad = 0;
inline constexpr std::int64_t kCopySep = 1;

// Row: run of seq_len/2 tokens from [2, vocab), SEP, then seq_len/2
// placeholders. Targets after SEP repeat the run; the loss covers only them.
TaskBatch gen_copy_task(std::uint64_t seed, std::size_t batch, std::size_t seq_len, std::size_t vocab);

// ---------------------------------------------------------------------------
// ListOps-mini
// ---------------------------------------------------------------------------

enum ListOpsToken : std::int64_t {
  kListPad = 0,
  kDigit0 = 1,  // digits 0..9 are ids 1..10
  kOpMin = 11,
  kOpMax = 12,
  kOpMed = 13,
  kOpSumMod = 14,
  kClose = 15,
};
inline constexpr std::size_t kListOpsVocab = 16;
inline constexpr std::size_t kListOpsClasses = 10;

// "[MAX 1 2 3]" style text <-> ids. Throws DataError on unknown words.
std::vector<std::int64_t> tokenize_listops(std::string_view text);
std::string detokenize_listops(std::span<const std::int64_t> ids);

// Evaluates a tokenized expression (the generator's reference evaluator).
int evaluate_listops(std::span<const std::int64_t> ids);

// Expressions nest at most max_depth operators deep and are at most max_len
// tokens; each operator takes 2 to 5 arguments. MED of an even count takes
// the lower middle value.
TaskBatch gen_listops_mini(std::uint64_t seed, std::size_t batch, std::size_t max_depth, std::size_t max_len);

// ---------------------------------------------------------------------------
// Character-level language modelling
// ---------------------------------------------------------------------------

inline constexpr std::int64_t kCharPad = 0;
inline constexpr std::int64_t kCharBos = 1;

// Byte-level vocabulary: specials first, then the distinct bytes of the
// corpus in ascending order.
class CharVocab {
 public:
  explicit CharVocab(std::string_view corpus);
  std::size_t size() const { return 2 + bytes_.size(); }
  std::vector<std::int64_t> tokenize(std::string_view text) const;
  std::string detokenize(std::span<const std::int64_t> ids) const;

 private:
  std::vector<unsigned char> bytes_;
  std::int64_t index_[256];
};

// Non-overlapping windows over a token stream. Window w predicts tokens
// [w*L, w*L+L) from [BOS, the L-1 tokens before them].
class CharStream {
 public:
  CharStream(std::vector<std::int64_t> tokens, std::size_t seq_len);
  std::size_t windows() const { return tokens_.size() / seq_len_; }
  std::size_t seq_len() const { return seq_len_; }
  // Rows taken from window indices (mod windows()).
  TaskBatch batch(std::span<const std::size_t> window_ids) const;

 private:
  std::vector<std::int64_t> tokens_;
  std::size_t seq_len_;
};

struct CharCorpus {
  CharVocab vocab;
  CharStream train;
  CharStream eval;
};

// Splits the first floor(chars * split) characters off for training.
// Requires a valid UTF-8 file of at least 10 * seq_len characters.
CharCorpus load_char_lm(const std::filesystem::path& path, std::size_t seq_len, double split_fraction);
CharCorpus char_lm_from_text(std::string_view text, std::size_t seq_len, double split_fraction);

// ---------------------------------------------------------------------------
// Task interface used by training
// ---------------------------------------------------------------------------

enum class TaskKind { kCopy, kListOps, kCharLm };

struct TaskParams {
  TaskKind kind = TaskKind::kCopy;
  std::size_t seq_len = 17;   // copy: odd; char-lm: window length
  std::size_t vocab = 10;     // copy only
  std::size_t max_depth = 3;  // listops
  std::size_t max_len = 128;  // listops
  std::filesystem::path corpus;  // char-lm
  double split = 0.9;            // char-lm
  std::size_t eval_samples = 256;
};

std::string_view to_string(TaskKind k);
TaskKind parse_task_kind(std::string_view s);

class Task {
 public:
  virtual ~Task() = default;
  virtual std::string_view name() const = 0;
  virtual std::size_t vocab_size() const = 0;
  virtual std::size_t max_seq_len() const = 0;
  // 0 for per-token tasks.
  virtual std::size_t num_classes() const = 0;
  // Per-token tasks whose targets appear in later inputs need causal models.
  virtual bool requires_causal() const = 0;
  virtual TaskBatch train_batch(std::uint64_t seed, std::size_t batch) const = 0;
  // Fixed held-out set, identical on every call.
  virtual std::vector<TaskBatch> eval_batches(std::size_t batch) const = 0;
};

std::unique_ptr<Task> make_task(const TaskParams& params);

}  // namespace flowattn

#endif  // FLOWATTN_TASKS_HPP_
