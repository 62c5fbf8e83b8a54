#include "dcse/data.hpp"

#include <algorithm>
#include <fstream>

#include <json.hpp>

#include "dcse/error.hpp"

namespace dcse {

using nlohmann::json;

namespace {

DialogueSession parse_session(const json& j) {
  if (!j.is_object()) throw DataError("expected a JSON object");
  if (!j.contains("session_id") || !j["session_id"].is_string()) throw DataError("missing string field \"session_id\"");
  if (!j.contains("turns") || !j["turns"].is_array()) throw DataError("missing array field \"turns\"");
  DialogueSession s;
  s.session_id = j["session_id"].get<std::string>();
  for (const auto& t : j["turns"]) {
    if (!t.is_object()) throw DataError("turn is not an object");
    if (!t.contains("speaker") || !t["speaker"].is_string()) throw DataError("turn missing \"speaker\"");
    if (!t.contains("text") || !t["text"].is_string()) throw DataError("turn missing \"text\"");
    const auto speaker = t["speaker"].get<std::string>();
    Turn turn;
    if (speaker == "A") turn.speaker = Speaker::A;
    else if (speaker == "B") turn.speaker = Speaker::B;
    else throw DataError("speaker must be \"A\" or \"B\", got \"" + speaker + "\"");
    turn.text = t["text"].get<std::string>();
    if (t.contains("intent") && !t["intent"].is_null()) {
      if (!t["intent"].is_string()) throw DataError("\"intent\" must be a string or null");
      turn.intent = t["intent"].get<std::string>();
    }
    s.turns.push_back(std::move(turn));
  }
  return s;
}

}  // namespace

std::vector<DialogueSession> load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read corpus file " + path.string());
  std::vector<DialogueSession> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(parse_session(json::parse(line)));
    } catch (const json::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": malformed JSON: " + e.what());
    } catch (const DataError& e) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void save_corpus(const std::filesystem::path& path, const std::vector<DialogueSession>& sessions) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write corpus file " + path.string());
  for (const auto& s : sessions) {
    json turns = json::array();
    for (const auto& t : s.turns) {
      turns.push_back({{"speaker", t.speaker == Speaker::A ? "A" : "B"},
                       {"text", t.text},
                       {"intent", t.intent ? json(*t.intent) : json(nullptr)}});
    }
    out << json{{"session_id", s.session_id}, {"turns", turns}}.dump() << '\n';
  }
}

std::vector<DialogueSession> preprocess(const std::vector<DialogueSession>& sessions) {
  std::vector<DialogueSession> out;
  for (const auto& s : sessions) {
    DialogueSession merged{s.session_id, {}};
    for (const auto& t : s.turns) {
      if (!merged.turns.empty() && merged.turns.back().speaker == t.speaker) {
        merged.turns.back().text += " " + t.text;
      } else {
        merged.turns.push_back(t);
      }
    }
    if (merged.turns.size() >= kMinSessionTurns) out.push_back(std::move(merged));
  }
  return out;
}

std::vector<ContextWindow> extract_windows(const DialogueSession& session, std::size_t turn_budget,
                                           std::size_t session_index) {
  const std::size_t t = session.turns.size();
  std::vector<ContextWindow> out;
  if (t < 2 || turn_budget == 0) return out;
  const std::size_t want = std::min(turn_budget, t - 1);
  for (std::size_t k = 0; k < t; ++k) {
    ContextWindow w{session_index, k, {}};
    for (std::size_t dist = 1; w.context_indices.size() < want; ++dist) {
      if (dist <= k) w.context_indices.push_back(k - dist);
      if (w.context_indices.size() < want && k + dist < t) w.context_indices.push_back(k + dist);
    }
    std::sort(w.context_indices.begin(), w.context_indices.end());
    out.push_back(std::move(w));
  }
  return out;
}

std::vector<ContextWindow> extract_all_windows(const std::vector<DialogueSession>& sessions, std::size_t turn_budget) {
  std::vector<ContextWindow> out;
  for (std::size_t i = 0; i < sessions.size(); ++i) {
    auto w = extract_windows(sessions[i], turn_budget, i);
    out.insert(out.end(), std::make_move_iterator(w.begin()), std::make_move_iterator(w.end()));
  }
  return out;
}

}  // namespace dcse
