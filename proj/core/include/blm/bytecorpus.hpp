#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace blm {

// Raw byte window. Elements are uint8_t so the [0,256) invariant holds by
// construction; emptiness is checked where sequences enter the system.
using ByteSequence = std::vector<uint8_t>;

// Teacher tokenization of a byte window.
struct TokenSegmentation {
  std::vector<int> token_ids;
  std::vector<std::pair<int, int>> spans;  // inclusive (start_byte, end_byte)
  std::vector<uint8_t> boundary_labels;    // y_i = 1 iff byte i ends a token
  int token_count() const { return static_cast<int>(token_ids.size()); }
  // pos(k): byte index of the final byte of token k
  std::vector<int> boundary_positions() const;
};

// Byte-pair tokenizer: 256 byte units plus learned merges. Deterministic.
class TokenizerModel {
 public:
  // unit id -> byte string; ids [0,256) are the single bytes,
  // id 256+i is the result of merge i.
  const std::vector<ByteSequence>& units() const { return units_; }
  int vocab_size() const { return static_cast<int>(units_.size()); }
  int merge_count() const { return static_cast<int>(merge_left_.size()); }
  std::pair<int, int> merge(int i) const { return {merge_left_[i], merge_right_[i]}; }

  std::vector<int> tokenize(const ByteSequence& bytes) const;
  ByteSequence detokenize(const std::vector<int>& ids) const;

  // Versioned text format: header "bpe-v1 <vocab_size>", then one merge per
  // line as two space-separated hex byte strings, in application order.
  void save(const std::string& path) const;
  static TokenizerModel load(const std::string& path);

  static TokenizerModel from_merges(const std::vector<std::pair<int, int>>& merges);

 private:
  TokenizerModel();
  void add_merge(int left, int right);

  std::vector<ByteSequence> units_;
  std::vector<int> merge_left_, merge_right_;
  // (left<<32|right) -> rank, for fast tokenization
  std::vector<std::pair<uint64_t, int>> rank_;  // sorted flat map
  void rebuild_rank();
  int rank_of(int a, int b) const;

  friend TokenizerModel train_bpe(const ByteSequence&, int);
};

// Learns merges by repeatedly fusing the most frequent adjacent pair.
// Ties break toward the lexicographically smaller (left bytes, right bytes).
// Throws on empty corpus or vocab_size < 257.
TokenizerModel train_bpe(const ByteSequence& corpus, int vocab_size);

// Tokenizes the window and derives spans, labels and boundary positions.
TokenSegmentation segment(const TokenizerModel& tok, const ByteSequence& seq);

// Removes whitespace bytes (default: ASCII space only). Throws if the result
// would be empty.
ByteSequence trim_whitespace(const ByteSequence& seq,
                             const std::vector<uint8_t>& whitespace = {0x20});

// Reads a UTF-8 text file, or every regular file in a directory concatenated
// in lexicographic filename order. Throws if unreadable.
ByteSequence read_corpus(const std::string& path);

// Fixed-size windows at offsets 0, stride, 2*stride, ...; the trailing
// partial window is dropped. seed != 0 shuffles the window order
// deterministically. Throws on unreadable path or window_bytes < 2.
std::vector<ByteSequence> load_shards(const std::string& path, int window_bytes,
                                      int stride, uint64_t seed = 0);
std::vector<ByteSequence> cut_windows(const ByteSequence& corpus, int window_bytes,
                                      int stride, uint64_t seed = 0);

// Deterministic synthetic English-like corpus: Markov chain over a small word
// vocabulary, space-separated, newline-terminated sentences.
std::string synth_corpus(size_t min_bytes, uint64_t seed);

}  // namespace blm
