#pragma once

#include <string>
#include <utility>
#include <vector>

#include "blm/bytecorpus.hpp"
#include "blm/student.hpp"

namespace blm {

enum class PerturbKind { AntSpeak, Drop, RandomCase, Repeat, Uppercase };

const char* to_string(PerturbKind k);
PerturbKind parse_perturb_kind(const std::string& name);

struct PerturbationSpec {
  PerturbKind kind = PerturbKind::Uppercase;
  double rate = -1.0;  // Drop/Repeat only; negative selects the default (0.1 / 0.2)
  uint64_t seed = 0;

  double effective_rate() const;
  // "KIND" or "KIND:rate", e.g. "drop:0.15"
  static PerturbationSpec parse(const std::string& text, uint64_t seed = 0);
};

// Character-level text corruptions. AntSpeak uppercases everything and puts a
// space between consecutive characters; Drop deletes characters independently;
// RandomCase flips letter case with probability 0.5; Repeat duplicates
// characters; Uppercase maps letters up. Characters are UTF-8 code points
// (invalid sequences degrade to single bytes). Deterministic per seed;
// Uppercase and AntSpeak ignore the seed.
std::string perturb(const std::string& text, const PerturbationSpec& spec);

// 100 * (perturbed - floor) / max(unperturbed - floor, 0); the floor is the
// four-way multiple-choice chance level. Accepts fractions in [0,1] or
// percentages in (1,100] but not a mix; returns 0 when the denominator
// degenerates (< 1e-9).
double robustness_score(double unperturbed_acc, double perturbed_acc, double floor = 0.25);

struct RobustnessReport {
  double unperturbed = 0.0;
  std::vector<std::pair<std::string, double>> perturbed;  // (kind, accuracy)
  double noise_average = 0.0;
  double score = 0.0;
  double delta = 0.0;  // unperturbed - noise average
};

RobustnessReport make_robustness_report(double unperturbed,
                                        const std::vector<std::pair<std::string, double>>& perturbed,
                                        double floor = 0.25);
std::string format_report(const RobustnessReport& rep);

struct BoundaryMetrics {
  double precision = 0.0;  // 0 when nothing is predicted positive
  double recall = 0.0;
  double f1 = 0.0;
  double accuracy = 0.0;
};

BoundaryMetrics boundary_metrics(const std::vector<uint8_t>& pred,
                                 const std::vector<uint8_t>& gold);

// Renders text with '|' after every byte the router marks as a chunk
// boundary. Multi-byte UTF-8 characters are never split: the bar lands after
// the character containing the boundary byte and intra-character boundaries
// are tallied in a trailing footnote. Invalid UTF-8 falls back to a hex dump
// with bars after boundary bytes.
std::string viz_boundaries(const StudentModel& model, const std::string& text);

struct BpbReport {
  double byte_bpb = 0.0;   // next-byte bits per byte (JBP: boundary-marginal)
  double joint_bpb = 0.0;  // JBP: 512-way joint; MBP: equals byte_bpb
  long long bytes = 0;     // scored positions
};

// Teacher-forced bits-per-byte over sequential non-overlapping windows using
// the learned router. Accumulation order is fixed, so the value is
// independent of how callers shard the corpus.
BpbReport eval_bpb(const StudentModel& model, const ByteSequence& corpus, int window_bytes);

}  // namespace blm
