#pragma once

// Dialogue corpus ingestion, preprocessing and context-window extraction.

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace dcse {

enum class Speaker { A, B };

struct Turn {
  Speaker speaker = Speaker::A;
  std::string text;
  std::optional<std::string> intent;

  friend bool operator==(const Turn&, const Turn&) = default;
};

struct DialogueSession {
  std::string session_id;
  std::vector<Turn> turns;

  friend bool operator==(const DialogueSession&, const DialogueSession&) = default;
};

// A response position k and the utterances selected around it. Indices are
// zero-based positions in the session; context is kept in session order.
struct ContextWindow {
  std::size_t session = 0;  // index into the corpus the window came from
  std::size_t response_index = 0;
  std::vector<std::size_t> context_indices;
};

// One JSON object per line:
//   {"session_id": str, "turns": [{"speaker": "A"|"B", "text": str, "intent": str|null}]}
// Throws DataError naming the 1-based line on malformed input.
std::vector<DialogueSession> load_corpus(const std::filesystem::path& path);
void save_corpus(const std::filesystem::path& path, const std::vector<DialogueSession>& sessions);

inline constexpr std::size_t kMinSessionTurns = 4;

// Merges consecutive same-speaker turns (single-space joiner, first intent
// kept) and drops sessions left with fewer than kMinSessionTurns turns.
std::vector<DialogueSession> preprocess(const std::vector<DialogueSession>& sessions);

// One window per response position. The context holds the
// min(turn_budget, t - 1) nearest other turns, picked alternately before and
// after the response (before first at equal distance).
std::vector<ContextWindow> extract_windows(const DialogueSession& session, std::size_t turn_budget,
                                           std::size_t session_index = 0);

std::vector<ContextWindow> extract_all_windows(const std::vector<DialogueSession>& sessions, std::size_t turn_budget);

}  // namespace dcse
