#include "blm/evalrobust.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "blm/objectives.hpp"
#include "blm/rng.hpp"

namespace blm {

namespace {

// Splits into UTF-8 code points; returns false on malformed input.
bool utf8_split(const std::string& text, std::vector<std::string>* out) {
  out->clear();
  size_t i = 0;
  while (i < text.size()) {
    const unsigned char b = static_cast<unsigned char>(text[i]);
    int len = 0;
    if (b < 0x80)
      len = 1;
    else if ((b & 0xE0) == 0xC0)
      len = 2;
    else if ((b & 0xF0) == 0xE0)
      len = 3;
    else if ((b & 0xF8) == 0xF0)
      len = 4;
    else
      return false;
    if (i + len > text.size()) return false;
    for (int j = 1; j < len; ++j)
      if ((static_cast<unsigned char>(text[i + j]) & 0xC0) != 0x80) return false;
    out->push_back(text.substr(i, len));
    i += len;
  }
  return true;
}

std::string upper_ascii(const std::string& ch) {
  if (ch.size() != 1) return ch;
  return std::string(1, static_cast<char>(std::toupper(static_cast<unsigned char>(ch[0]))));
}

std::string flip_ascii_case(const std::string& ch) {
  if (ch.size() != 1) return ch;
  const unsigned char c = static_cast<unsigned char>(ch[0]);
  if (std::islower(c)) return std::string(1, static_cast<char>(std::toupper(c)));
  if (std::isupper(c)) return std::string(1, static_cast<char>(std::tolower(c)));
  return ch;
}

std::vector<std::string> chars_of(const std::string& text) {
  std::vector<std::string> chars;
  if (!utf8_split(text, &chars)) {
    chars.clear();
    for (char c : text) chars.emplace_back(1, c);  // byte-per-character fallback
  }
  return chars;
}

double logsumexp2(double a, double b) {
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

double logsumexp(const double* x, int n) {
  double m = x[0];
  for (int i = 1; i < n; ++i) m = std::max(m, x[i]);
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += std::exp(x[i] - m);
  return m + std::log(s);
}

}  // namespace

const char* to_string(PerturbKind k) {
  switch (k) {
    case PerturbKind::AntSpeak: return "antspeak";
    case PerturbKind::Drop: return "drop";
    case PerturbKind::RandomCase: return "randomcase";
    case PerturbKind::Repeat: return "repeat";
    case PerturbKind::Uppercase: return "uppercase";
  }
  return "?";
}

PerturbKind parse_perturb_kind(const std::string& name) {
  std::string s;
  for (char c : name)
    if (c != '_' && c != '-') s += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (s == "antspeak") return PerturbKind::AntSpeak;
  if (s == "drop") return PerturbKind::Drop;
  if (s == "randomcase") return PerturbKind::RandomCase;
  if (s == "repeat") return PerturbKind::Repeat;
  if (s == "uppercase") return PerturbKind::Uppercase;
  throw std::invalid_argument("unknown perturbation kind: " + name);
}

double PerturbationSpec::effective_rate() const {
  if (rate >= 0.0) return rate;
  if (kind == PerturbKind::Drop) return 0.1;
  if (kind == PerturbKind::Repeat) return 0.2;
  return 0.0;
}

PerturbationSpec PerturbationSpec::parse(const std::string& text, uint64_t seed) {
  PerturbationSpec spec;
  spec.seed = seed;
  const auto colon = text.find(':');
  spec.kind = parse_perturb_kind(text.substr(0, colon));
  if (colon != std::string::npos) {
    spec.rate = std::stod(text.substr(colon + 1));
    if (spec.rate < 0.0 || spec.rate > 1.0)
      throw std::invalid_argument("perturbation rate must be in [0,1]");
  }
  return spec;
}

std::string perturb(const std::string& text, const PerturbationSpec& spec) {
  const double r = spec.effective_rate();
  if (r < 0.0 || r > 1.0) throw std::invalid_argument("perturbation rate must be in [0,1]");
  const std::vector<std::string> chars = chars_of(text);
  Rng rng(spec.seed);
  std::string out;
  out.reserve(text.size() * 2);

  switch (spec.kind) {
    case PerturbKind::AntSpeak:
      for (size_t i = 0; i < chars.size(); ++i) {
        if (i) out += ' ';
        out += upper_ascii(chars[i]);
      }
      return out;
    case PerturbKind::Drop:
      for (const auto& ch : chars)
        if (rng.uniform() >= r) out += ch;
      return out;
    case PerturbKind::RandomCase:
      for (const auto& ch : chars) out += rng.uniform() < 0.5 ? flip_ascii_case(ch) : ch;
      return out;
    case PerturbKind::Repeat:
      for (const auto& ch : chars) {
        out += ch;
        if (rng.uniform() < r) out += ch;
      }
      return out;
    case PerturbKind::Uppercase:
      for (const auto& ch : chars) out += upper_ascii(ch);
      return out;
  }
  throw std::invalid_argument("unknown perturbation kind");
}

double robustness_score(double unperturbed_acc, double perturbed_acc, double floor) {
  const bool u_pct = unperturbed_acc > 1.0, p_pct = perturbed_acc > 1.0;
  if (u_pct != p_pct)
    throw std::invalid_argument("robustness_score: mixed percent and fraction accuracies");
  if (unperturbed_acc < 0.0 || perturbed_acc < 0.0 ||
      unperturbed_acc > (u_pct ? 100.0 : 1.0) || perturbed_acc > (u_pct ? 100.0 : 1.0))
    throw std::invalid_argument("robustness_score: accuracy out of range");
  const double f = u_pct ? floor * 100.0 : floor;
  const double denom = std::max(unperturbed_acc - f, 0.0);
  if (denom < 1e-9) return 0.0;
  return 100.0 * (perturbed_acc - f) / denom;
}

RobustnessReport make_robustness_report(
    double unperturbed, const std::vector<std::pair<std::string, double>>& perturbed,
    double floor) {
  if (perturbed.empty()) throw std::invalid_argument("robustness report needs perturbations");
  RobustnessReport rep;
  rep.unperturbed = unperturbed;
  rep.perturbed = perturbed;
  for (const auto& [_, acc] : perturbed) rep.noise_average += acc;
  rep.noise_average /= static_cast<double>(perturbed.size());
  rep.score = robustness_score(unperturbed, rep.noise_average, floor);
  rep.delta = unperturbed - rep.noise_average;
  return rep;
}

std::string format_report(const RobustnessReport& rep) {
  std::ostringstream os;
  os.precision(4);
  os << std::fixed;
  os << "unperturbed=" << rep.unperturbed << "\n";
  for (const auto& [kind, acc] : rep.perturbed) os << "perturbed." << kind << "=" << acc << "\n";
  os << "noise_average=" << rep.noise_average << "\n";
  os << "robustness_score=" << rep.score << "\n";
  os << "delta=" << rep.delta << "\n";
  return os.str();
}

BoundaryMetrics boundary_metrics(const std::vector<uint8_t>& pred,
                                 const std::vector<uint8_t>& gold) {
  if (pred.size() != gold.size())
    throw std::invalid_argument("boundary_metrics: length mismatch");
  if (pred.empty()) throw std::invalid_argument("boundary_metrics: empty masks");
  long long tp = 0, fp = 0, fn = 0, tn = 0;
  for (size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] && gold[i])
      ++tp;
    else if (pred[i])
      ++fp;
    else if (gold[i])
      ++fn;
    else
      ++tn;
  }
  BoundaryMetrics m;
  m.precision = tp + fp > 0 ? double(tp) / double(tp + fp) : 0.0;
  m.recall = tp + fn > 0 ? double(tp) / double(tp + fn) : 0.0;
  m.f1 = m.precision + m.recall > 0.0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
                                      : 0.0;
  m.accuracy = double(tp + tn) / double(pred.size());
  return m;
}

std::string viz_boundaries(const StudentModel& model, const std::string& text) {
  if (text.empty()) throw std::invalid_argument("viz_boundaries: empty text");
  const ByteSequence bytes(text.begin(), text.end());
  Tape t;
  const TapeChunking ch = model.route(t, model.encode(t, bytes));
  const std::vector<uint8_t>& mask = ch.plan.mask;

  std::vector<std::string> chars;
  std::ostringstream os;
  if (!utf8_split(text, &chars)) {
    // hex dump: one token per byte, '|' kept attached to its byte
    for (size_t i = 0; i < bytes.size(); ++i) {
      if (i) os << ' ';
      static const char* hex = "0123456789abcdef";
      os << hex[bytes[i] >> 4] << hex[bytes[i] & 0xF];
      if (mask[i]) os << '|';
    }
    return os.str();
  }

  size_t pos = 0;
  int intra = 0;
  for (const auto& ch_str : chars) {
    bool bar = false;
    for (size_t j = 0; j < ch_str.size(); ++j) {
      if (!mask[pos + j]) continue;
      bar = true;
      if (j + 1 < ch_str.size()) ++intra;  // boundary inside a code point
    }
    os << ch_str;
    if (bar) os << '|';
    pos += ch_str.size();
  }
  if (intra > 0) os << "\n[intra-character boundaries: " << intra << "]";
  return os.str();
}

BpbReport eval_bpb(const StudentModel& model, const ByteSequence& corpus, int window_bytes) {
  if (window_bytes < 2) throw std::invalid_argument("eval_bpb: window_bytes < 2");
  if (corpus.size() < static_cast<size_t>(window_bytes))
    throw std::invalid_argument("eval_bpb: corpus smaller than one window");
  const bool jbp = model.config().head_mode == HeadMode::Jbp;

  double byte_nats = 0.0, joint_nats = 0.0;
  long long scored = 0;
  for (size_t off = 0; off + window_bytes <= corpus.size(); off += window_bytes) {
    const ByteSequence w(corpus.begin() + off, corpus.begin() + off + window_bytes);
    Tape t;
    const Stage2Out out = model.forward_stage2(t, w, /*training=*/false);
    const Tensor& logits = t.val(out.logits);
    const std::vector<uint8_t>& mask = out.chunking.plan.mask;
    for (int i = 0; i + 1 < window_bytes; ++i) {
      const double* row = logits.row(i);
      const int byte = w[i + 1];
      if (jbp) {
        const double z = logsumexp(row, 512);
        joint_nats += z - row[jbp_encode(byte, mask[i + 1])];
        // marginalize the boundary bit for the pure next-byte score
        byte_nats += z - logsumexp2(row[byte], row[byte + 256]);
      } else {
        const double z = logsumexp(row, 256);
        byte_nats += z - row[byte];
        joint_nats += z - row[byte];
      }
      ++scored;
    }
  }
  BpbReport rep;
  rep.byte_bpb = bits_per_byte(byte_nats, scored);
  rep.joint_bpb = bits_per_byte(joint_nats, scored);
  rep.bytes = scored;
  return rep;
}

}  // namespace blm
