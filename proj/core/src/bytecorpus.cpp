#include "blm/bytecorpus.hpp"

#include <algorithm>
#include <cassert>
#include <filesystem>
#include <fstream>
#include <queue>
#include <set>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include "blm/rng.hpp"

namespace blm {

namespace {
uint64_t pair_key(int a, int b) {
  return (static_cast<uint64_t>(a) << 32) | static_cast<uint32_t>(b);
}
}  // namespace

std::vector<int> TokenSegmentation::boundary_positions() const {
  std::vector<int> pos;
  pos.reserve(spans.size());
  for (const auto& s : spans) pos.push_back(s.second);
  return pos;
}

TokenizerModel::TokenizerModel() {
  units_.resize(256);
  for (int b = 0; b < 256; ++b) units_[b] = {static_cast<uint8_t>(b)};
}

void TokenizerModel::add_merge(int left, int right) {
  ByteSequence merged = units_[left];
  merged.insert(merged.end(), units_[right].begin(), units_[right].end());
  units_.push_back(std::move(merged));
  merge_left_.push_back(left);
  merge_right_.push_back(right);
}

void TokenizerModel::rebuild_rank() {
  rank_.clear();
  rank_.reserve(merge_left_.size());
  for (size_t i = 0; i < merge_left_.size(); ++i)
    rank_.emplace_back(pair_key(merge_left_[i], merge_right_[i]), static_cast<int>(i));
  std::sort(rank_.begin(), rank_.end());
}

int TokenizerModel::rank_of(int a, int b) const {
  const uint64_t key = pair_key(a, b);
  auto it = std::lower_bound(rank_.begin(), rank_.end(), key,
                             [](const auto& p, uint64_t k) { return p.first < k; });
  if (it == rank_.end() || it->first != key) return -1;
  return it->second;
}

TokenizerModel TokenizerModel::from_merges(const std::vector<std::pair<int, int>>& merges) {
  TokenizerModel tm;
  for (const auto& [l, r] : merges) {
    if (l < 0 || r < 0 || l >= tm.vocab_size() || r >= tm.vocab_size())
      throw std::runtime_error("tokenizer: merge references unknown unit");
    tm.add_merge(l, r);
  }
  tm.rebuild_rank();
  return tm;
}

std::vector<int> TokenizerModel::tokenize(const ByteSequence& bytes) const {
  const int n = static_cast<int>(bytes.size());
  std::vector<int> sym(bytes.begin(), bytes.end());
  if (n < 2 || merge_left_.empty()) return sym;

  std::vector<int> prev(n), next(n);
  std::vector<char> alive(n, 1);
  for (int i = 0; i < n; ++i) {
    prev[i] = i - 1;
    next[i] = i + 1 < n ? i + 1 : -1;
  }

  // min-heap of (merge rank, left position); leftmost occurrence first
  using Cand = std::pair<int, int>;
  std::priority_queue<Cand, std::vector<Cand>, std::greater<>> heap;
  auto push_cand = [&](int i) {
    if (i < 0 || next[i] < 0) return;
    const int r = rank_of(sym[i], sym[next[i]]);
    if (r >= 0) heap.emplace(r, i);
  };
  for (int i = 0; i + 1 < n; ++i) push_cand(i);

  while (!heap.empty()) {
    auto [r, i] = heap.top();
    heap.pop();
    if (!alive[i]) continue;
    const int j = next[i];
    if (j < 0 || !alive[j]) continue;
    if (rank_of(sym[i], sym[j]) != r) continue;  // stale entry
    sym[i] = 256 + r;
    next[i] = next[j];
    if (next[j] >= 0) prev[next[j]] = i;
    alive[j] = 0;
    push_cand(prev[i]);
    push_cand(i);
  }

  std::vector<int> out;
  for (int i = 0; i != -1; i = next[i])
    if (alive[i]) out.push_back(sym[i]);
  return out;
}

ByteSequence TokenizerModel::detokenize(const std::vector<int>& ids) const {
  ByteSequence out;
  for (int id : ids) {
    if (id < 0 || id >= vocab_size())
      throw std::runtime_error("tokenizer: id out of range");
    out.insert(out.end(), units_[id].begin(), units_[id].end());
  }
  return out;
}

void TokenizerModel::save(const std::string& path) const {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("tokenizer: cannot write " + path);
  f << "bpe-v1 " << vocab_size() << "\n";
  static const char* hex = "0123456789abcdef";
  auto put_hex = [&](const ByteSequence& bs) {
    for (uint8_t b : bs) {
      f.put(hex[b >> 4]);
      f.put(hex[b & 15]);
    }
  };
  for (size_t i = 0; i < merge_left_.size(); ++i) {
    put_hex(units_[merge_left_[i]]);
    f.put(' ');
    put_hex(units_[merge_right_[i]]);
    f.put('\n');
  }
  if (!f) throw std::runtime_error("tokenizer: write failed for " + path);
}

TokenizerModel TokenizerModel::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("tokenizer: cannot read " + path);
  std::string magic;
  int vocab = 0;
  f >> magic >> vocab;
  if (magic != "bpe-v1") throw std::runtime_error("tokenizer: bad header in " + path);

  auto parse_hex = [&](const std::string& s) {
    if (s.empty() || s.size() % 2) throw std::runtime_error("tokenizer: bad hex unit");
    ByteSequence out;
    for (size_t i = 0; i < s.size(); i += 2) {
      auto nib = [&](char c) -> int {
        if (c >= '0' && c <= '9') return c - '0';
        if (c >= 'a' && c <= 'f') return c - 'a' + 10;
        throw std::runtime_error("tokenizer: bad hex digit");
      };
      out.push_back(static_cast<uint8_t>(nib(s[i]) * 16 + nib(s[i + 1])));
    }
    return out;
  };

  TokenizerModel tm;
  // byte string -> unit id, grown as merges are replayed
  std::unordered_map<std::string, int> by_bytes;
  for (int b = 0; b < 256; ++b) by_bytes[std::string(1, static_cast<char>(b))] = b;
  auto lookup = [&](const ByteSequence& bs) {
    auto it = by_bytes.find(std::string(bs.begin(), bs.end()));
    if (it == by_bytes.end())
      throw std::runtime_error("tokenizer: merge references unknown unit");
    return it->second;
  };

  std::string left, right;
  while (f >> left >> right) {
    const int l = lookup(parse_hex(left));
    const int r = lookup(parse_hex(right));
    tm.add_merge(l, r);
    const auto& u = tm.units_.back();
    by_bytes[std::string(u.begin(), u.end())] = tm.vocab_size() - 1;
  }
  if (tm.vocab_size() != vocab)
    throw std::runtime_error("tokenizer: vocab size mismatch in " + path);
  tm.rebuild_rank();
  return tm;
}

TokenizerModel train_bpe(const ByteSequence& corpus, int vocab_size) {
  if (corpus.empty()) throw std::runtime_error("train_bpe: empty corpus");
  if (vocab_size < 257) throw std::runtime_error("train_bpe: vocab_size must be >= 257");

  const int n = static_cast<int>(corpus.size());
  std::vector<int> sym(corpus.begin(), corpus.end());
  std::vector<int> prev(n), next(n);
  std::vector<char> alive(n, 1);
  for (int i = 0; i < n; ++i) {
    prev[i] = i - 1;
    next[i] = i + 1 < n ? i + 1 : -1;
  }

  std::unordered_map<uint64_t, long long> counts;
  std::unordered_map<uint64_t, std::vector<int>> positions;
  for (int i = 0; i + 1 < n; ++i) {
    const uint64_t k = pair_key(sym[i], sym[i + 1]);
    ++counts[k];
    positions[k].push_back(i);
  }

  TokenizerModel tm;
  const int target_merges = vocab_size - 256;
  for (int m = 0; m < target_merges; ++m) {
    // best pair: highest count, ties toward lexicographically smaller bytes
    uint64_t best_key = 0;
    long long best_count = 0;
    for (const auto& [k, c] : counts) {
      if (c < best_count) continue;
      if (c > best_count) {
        best_count = c;
        best_key = k;
        continue;
      }
      const auto& la = tm.units()[static_cast<int>(k >> 32)];
      const auto& lb = tm.units()[static_cast<int>(best_key >> 32)];
      if (la < lb || (la == lb && tm.units()[static_cast<int>(k & 0xffffffff)] <
                                      tm.units()[static_cast<int>(best_key & 0xffffffff)]))
        best_key = k;
    }
    if (best_count < 2) break;  // no pair worth a vocabulary slot

    const int a = static_cast<int>(best_key >> 32);
    const int b = static_cast<int>(best_key & 0xffffffff);
    tm.add_merge(a, b);
    const int merged = tm.vocab_size() - 1;

    std::vector<int> occ = std::move(positions[best_key]);
    positions.erase(best_key);
    std::sort(occ.begin(), occ.end());
    for (int i : occ) {
      if (!alive[i] || sym[i] != a) continue;
      const int j = next[i];
      if (j < 0 || !alive[j] || sym[j] != b) continue;
      const int p = prev[i];
      const int q = next[j];
      if (p >= 0) {
        --counts[pair_key(sym[p], a)];
        const uint64_t nk = pair_key(sym[p], merged);
        ++counts[nk];
        positions[nk].push_back(p);
      }
      if (q >= 0) {
        --counts[pair_key(b, sym[q])];
        const uint64_t nk = pair_key(merged, sym[q]);
        ++counts[nk];
        positions[nk].push_back(i);
      }
      --counts[best_key];
      sym[i] = merged;
      next[i] = q;
      if (q >= 0) prev[q] = i;
      alive[j] = 0;
    }
    counts.erase(best_key);
  }
  tm.rebuild_rank();
  return tm;
}

TokenSegmentation segment(const TokenizerModel& tok, const ByteSequence& seq) {
  if (seq.empty()) throw std::runtime_error("segment: empty sequence");
  TokenSegmentation out;
  out.token_ids = tok.tokenize(seq);
  out.boundary_labels.assign(seq.size(), 0);
  int off = 0;
  for (int id : out.token_ids) {
    const int len = static_cast<int>(tok.units()[id].size());
    out.spans.emplace_back(off, off + len - 1);
    out.boundary_labels[off + len - 1] = 1;
    off += len;
  }
  assert(off == static_cast<int>(seq.size()));
  return out;
}

ByteSequence trim_whitespace(const ByteSequence& seq,
                             const std::vector<uint8_t>& whitespace) {
  ByteSequence out;
  out.reserve(seq.size());
  for (uint8_t b : seq)
    if (std::find(whitespace.begin(), whitespace.end(), b) == whitespace.end())
      out.push_back(b);
  if (out.empty()) throw std::runtime_error("trim_whitespace: result is empty");
  return out;
}

ByteSequence read_corpus(const std::string& path) {
  namespace fs = std::filesystem;
  std::vector<std::string> files;
  if (fs::is_directory(path)) {
    for (const auto& e : fs::directory_iterator(path))
      if (e.is_regular_file()) files.push_back(e.path().string());
    std::sort(files.begin(), files.end());
  } else if (fs::is_regular_file(path)) {
    files.push_back(path);
  } else {
    throw std::runtime_error("read_corpus: no such file or directory: " + path);
  }
  ByteSequence out;
  for (const auto& f : files) {
    std::ifstream in(f, std::ios::binary);
    if (!in) throw std::runtime_error("read_corpus: cannot read " + f);
    out.insert(out.end(), std::istreambuf_iterator<char>(in),
               std::istreambuf_iterator<char>());
  }
  return out;
}

std::vector<ByteSequence> cut_windows(const ByteSequence& corpus, int window_bytes,
                                      int stride, uint64_t seed) {
  if (window_bytes < 2) throw std::runtime_error("cut_windows: window_bytes must be >= 2");
  if (stride < 1) throw std::runtime_error("cut_windows: stride must be >= 1");
  std::vector<ByteSequence> out;
  for (size_t off = 0; off + window_bytes <= corpus.size(); off += stride)
    out.emplace_back(corpus.begin() + off, corpus.begin() + off + window_bytes);
  if (seed != 0 && out.size() > 1) {
    Rng rng(seed);
    for (size_t i = out.size() - 1; i > 0; --i)
      std::swap(out[i], out[rng.below(i + 1)]);
  }
  return out;
}

std::vector<ByteSequence> load_shards(const std::string& path, int window_bytes,
                                      int stride, uint64_t seed) {
  return cut_windows(read_corpus(path), window_bytes, stride, seed);
}

std::string synth_corpus(size_t min_bytes, uint64_t seed) {
  Rng rng(seed);
  constexpr int kWords = 120;
  std::vector<std::string> words;
  std::set<std::string> seen;
  while (static_cast<int>(words.size()) < kWords) {
    const int len = 3 + static_cast<int>(rng.below(6));
    std::string w;
    for (int i = 0; i < len; ++i) w.push_back('a' + static_cast<char>(rng.below(26)));
    if (seen.insert(w).second) words.push_back(w);
  }

  // sparse first-order transitions with fixed successor sets
  auto successor = [&](int w, double u) {
    if (u < 0.4) return (w * 7 + 1) % kWords;
    if (u < 0.7) return (w * 13 + 3) % kWords;
    if (u < 0.9) return (w * 29 + 5) % kWords;
    return (w * 41 + 11) % kWords;
  };

  std::string out;
  out.reserve(min_bytes + 128);
  int cur = static_cast<int>(rng.below(kWords));
  while (out.size() < min_bytes) {
    const int sentence_len = 8 + static_cast<int>(rng.below(7));
    for (int i = 0; i < sentence_len; ++i) {
      out += words[cur];
      out += (i + 1 < sentence_len) ? " " : ".\n";
      cur = successor(cur, rng.uniform());
    }
  }
  return out;
}

}  // namespace blm
