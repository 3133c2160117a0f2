#pragma once

// Review events and the per-document label history derived from them.

#include <set>
#include <string>
#include <vector>

#include "harmless/error.hpp"
#include "harmless/oracle.hpp"

namespace harmless {

enum class Purpose { inspect, double_check };

inline std::string to_string(Purpose p) { return p == Purpose::inspect ? "inspect" : "double_check"; }

inline Purpose parse_purpose(std::string_view s) {
  if (s == "inspect") return Purpose::inspect;
  if (s == "double_check") return Purpose::double_check;
  throw ArgumentError("purpose must be inspect|double_check, got '" + std::string(s) + "'");
}

struct ReviewEvent {
  std::size_t doc_id = 0;
  std::string reviewer;
  Verdict verdict = Verdict::non_vulnerable;
  Purpose purpose = Purpose::inspect;
  int round = 0;

  bool operator==(const ReviewEvent&) const = default;
};

// Append-only event log plus per-document summaries. A document is labeled
// once it has any event; it is positive once any event said vulnerable
// (verdicts never flip back).
class LabelHistory {
 public:
  explicit LabelHistory(std::size_t n_docs = 0)
      : per_doc_(n_docs), labeled_(n_docs, false), positive_(n_docs, false) {}

  std::size_t size() const noexcept { return labeled_.size(); }

  void add(ReviewEvent e) {
    if (e.doc_id >= size()) throw ArgumentError("review event for unknown document " + std::to_string(e.doc_id));
    per_doc_[e.doc_id].push_back(events_.size());
    if (!labeled_[e.doc_id]) {
      labeled_[e.doc_id] = true;
      ++n_labeled_;
    }
    if (e.verdict == Verdict::vulnerable && !positive_[e.doc_id]) {
      positive_[e.doc_id] = true;
      ++n_positive_;
    }
    events_.push_back(std::move(e));
  }

  const std::vector<ReviewEvent>& events() const noexcept { return events_; }
  std::size_t event_count() const noexcept { return events_.size(); }
  std::size_t event_count(std::size_t doc) const { return per_doc_.at(doc).size(); }
  std::size_t labeled_count() const noexcept { return n_labeled_; }
  std::size_t positive_count() const noexcept { return n_positive_; }
  bool labeled(std::size_t doc) const { return labeled_.at(doc); }
  bool positive(std::size_t doc) const { return positive_.at(doc); }
  const std::vector<bool>& labeled_mask() const noexcept { return labeled_; }
  const std::vector<bool>& positive_mask() const noexcept { return positive_; }

  std::set<std::string> reviewers(std::size_t doc) const {
    std::set<std::string> out;
    for (auto idx : per_doc_.at(doc)) out.insert(events_[idx].reviewer);
    return out;
  }

  const ReviewEvent& first_event(std::size_t doc) const { return events_[per_doc_.at(doc).front()]; }

  std::vector<std::size_t> unlabeled() const {
    std::vector<std::size_t> out;
    out.reserve(size() - n_labeled_);
    for (std::size_t i = 0; i < size(); ++i)
      if (!labeled_[i]) out.push_back(i);
    return out;
  }

  bool operator==(const LabelHistory&) const = default;

 private:
  std::vector<ReviewEvent> events_;
  std::vector<std::vector<std::size_t>> per_doc_;
  std::vector<bool> labeled_;
  std::vector<bool> positive_;
  std::size_t n_labeled_ = 0;
  std::size_t n_positive_ = 0;
};

}  // namespace harmless
