#include "cinetraj/caption.hpp"

#include <algorithm>
#include <cctype>
#include <regex>

#include <httplib.h>
#include <json.hpp>

#include "cinetraj/error.hpp"
#include "prompt_template_data.hpp"

namespace cinetraj {
namespace {

constexpr std::array<std::string_view, 6> kCameraPhrases = {
    "trucks left", "trucks right", "booms bottom", "booms top", "pushes in", "pulls out"};
constexpr std::array<std::string_view, 6> kCharacterPhrases = {
    "moves left", "moves right", "moves down", "moves up", "moves forward", "moves backward"};

const std::array<std::string_view, 6>& phrases(Vocab vocab) {
  return vocab == Vocab::kCamera ? kCameraPhrases : kCharacterPhrases;
}

std::string verb_phrase(std::string_view label, Vocab vocab) {
  const AxisState s = state_for(label, vocab);
  if (s.is_static()) return vocab == Vocab::kCamera ? "remains static" : "stays static";
  std::string out;
  for (int a = 0; a < 3; ++a) {
    if (s[a] == 0) continue;
    if (!out.empty()) out += " and ";
    out += phrases(vocab)[2 * a + (s[a] > 0 ? 1 : 0)];
  }
  return out;
}

void check_coverage(std::span<const TagSegment> segs, std::size_t n, std::string_view what) {
  std::size_t next = 0;
  for (const auto& s : segs) {
    if (s.start != next || s.end < s.start || s.end >= n) {
      throw Error(ErrorCode::kMalformedSegments,
                  std::string(what) + " segments do not tile [0, " + std::to_string(n - 1) + "]");
    }
    next = s.end + 1;
  }
  if (next != n) {
    throw Error(ErrorCode::kMalformedSegments, std::string(what) + " segments stop short");
  }
}

std::string replace_first(std::string s, std::string_view from, std::string_view to) {
  const auto pos = s.find(from);
  if (pos != std::string::npos) s.replace(pos, from.size(), to);
  return s;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

// Label of the character segment overlapping [a, b] the most.
std::string_view dominant_label(std::span<const TagSegment> segs, std::size_t a, std::size_t b) {
  std::string_view best = "static";
  std::size_t best_overlap = 0;
  for (const auto& s : segs) {
    const std::size_t lo = std::max(a, s.start);
    const std::size_t hi = std::min(b, s.end);
    if (hi < lo) continue;
    if (hi - lo + 1 > best_overlap) {
      best_overlap = hi - lo + 1;
      best = s.label;
    }
  }
  return best;
}

}  // namespace

std::string_view to_string(CaptionKind kind) {
  return kind == CaptionKind::kCameraOnly ? "camera" : "camera-character";
}

CaptionKind caption_kind_from_string(std::string_view s) {
  if (s == "camera") return CaptionKind::kCameraOnly;
  if (s == "camera-character") return CaptionKind::kCameraCharacter;
  throw Error(ErrorCode::kFormat, "unknown caption kind '" + std::string(s) + "'");
}

std::string format_segments(std::span<const TagSegment> segs) {
  std::string out;
  for (const auto& s : segs) {
    if (!out.empty()) out += ", ";
    out += "Between frames " + std::to_string(s.start) + " and " + std::to_string(s.end) + ": " +
           s.label;
  }
  return out;
}

std::vector<TagSegment> parse_segments(std::string_view line) {
  static const std::regex item(R"(Between frames (\d+) and (\d+): ([^,]+))");
  std::vector<TagSegment> out;
  const std::string s(line);
  std::size_t consumed = 0;
  for (auto it = std::sregex_iterator(s.begin(), s.end(), item); it != std::sregex_iterator();
       ++it) {
    const auto& m = *it;
    const auto gap = trim(std::string_view(s).substr(consumed, m.position() - consumed));
    if (!(gap.empty() || gap == ",")) {
      throw Error(ErrorCode::kFormat, "unparseable outline text near '" + std::string(gap) + "'");
    }
    out.push_back({std::stoul(m[1]), std::stoul(m[2]), m[3].str()});
    consumed = m.position() + m.length();
  }
  if (!trim(std::string_view(s).substr(consumed)).empty() || out.empty()) {
    throw Error(ErrorCode::kFormat, "unparseable outline line");
  }
  return out;
}

Outline build_outline(std::span<const TagSegment> camera, std::span<const TagSegment> character,
                      std::size_t n_frames) {
  if (n_frames == 0) throw Error(ErrorCode::kMalformedSegments, "outline of zero frames");
  check_coverage(camera, n_frames, "camera");
  Outline o;
  o.total_frames = n_frames;
  o.camera_line = format_segments(camera);
  if (character.empty()) {
    const TagSegment fill{0, n_frames - 1, "static"};
    o.character_line = format_segments(std::span(&fill, 1));
  } else {
    check_coverage(character, n_frames, "character");
    o.character_line = format_segments(character);
  }
  return o;
}

std::string_view prompt_template() { return detail::kPromptTemplate; }

std::string build_llm_prompt(const Outline& outline) {
  std::string p(prompt_template());
  const std::size_t last = outline.total_frames == 0 ? 0 : outline.total_frames - 1;
  p = replace_first(std::move(p), "{CURRENT_NUM_FRAME}", std::to_string(last));
  // The template names the camera slot twice; the second one is the character.
  p = replace_first(std::move(p), "{CURRENT_CAMERA_DESCRIPTION}", outline.camera_line);
  p = replace_first(std::move(p), "{CURRENT_CAMERA_DESCRIPTION}", outline.character_line);
  return p;
}

Caption rule_based_caption(std::span<const TagSegment> camera,
                           std::span<const TagSegment> character, CaptionKind kind) {
  if (camera.empty()) throw Error(ErrorCode::kMalformedSegments, "caption of no camera segments");
  std::vector<std::string> clauses;
  const bool all_static =
      std::all_of(camera.begin(), camera.end(), [](const auto& s) { return s.label == "static"; }) &&
      std::all_of(character.begin(), character.end(),
                  [](const auto& s) { return s.label == "static"; });
  if (kind == CaptionKind::kCameraOnly || all_static) {
    for (const auto& s : camera) {
      std::string c = verb_phrase(s.label, Vocab::kCamera);
      if (clauses.empty()) c = "the camera " + c;
      if (clauses.empty() || clauses.back() != c) clauses.push_back(std::move(c));
    }
  } else {
    for (const auto& s : camera) {
      const auto who = dominant_label(character, s.start, s.end);
      std::string c = "while the character " + verb_phrase(who, Vocab::kCharacter) +
                      ", the camera " + verb_phrase(s.label, Vocab::kCamera);
      if (clauses.empty() || clauses.back() != c) clauses.push_back(std::move(c));
    }
  }
  std::string text;
  for (const auto& c : clauses) {
    if (!text.empty()) text += ", then ";
    text += c;
  }
  text[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(text[0])));
  text += '.';
  return {text, all_static ? CaptionKind::kCameraOnly : kind};
}

std::vector<std::string> caption_camera_labels(std::string_view text) {
  std::string lower;
  for (char c : text) lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  while (!lower.empty() && (lower.back() == '.' || std::isspace(static_cast<unsigned char>(lower.back())))) {
    lower.pop_back();
  }
  std::vector<std::string> labels;
  std::size_t pos = 0;
  const std::string sep = ", then ";
  while (pos <= lower.size()) {
    std::size_t end = lower.find(sep, pos);
    if (end == std::string::npos) end = lower.size();
    std::string_view clause = std::string_view(lower).substr(pos, end - pos);
    const auto cam = clause.rfind("the camera ");
    if (cam != std::string_view::npos) clause.remove_prefix(cam + 11);
    AxisState s;
    bool known = clause == "remains static";
    std::size_t p = 0;
    while (!known && p < clause.size()) {
      std::size_t q = clause.find(" and ", p);
      if (q == std::string_view::npos) q = clause.size();
      const auto phrase = clause.substr(p, q - p);
      const auto it = std::find(kCameraPhrases.begin(), kCameraPhrases.end(), phrase);
      if (it == kCameraPhrases.end()) {
        throw Error(ErrorCode::kFormat, "caption clause not in the closed grammar: '" +
                                            std::string(clause) + "'");
      }
      const auto idx = static_cast<int>(it - kCameraPhrases.begin());
      s[idx / 2] = idx % 2 == 0 ? -1 : 1;
      p = q == clause.size() ? q : q + 5;
    }
    labels.push_back(label_for(s, Vocab::kCamera));
    pos = end + sep.size();
  }
  return labels;
}

Caption llm_caption(const LlmRequest& request) {
  static const std::regex url(R"(^(https?)://([^/:]+)(:(\d+))?(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(request.endpoint, m, url)) {
    throw Error(ErrorCode::kTransport, "malformed endpoint URL '" + request.endpoint + "'");
  }
  if (m[1] != "http") {
    throw Error(ErrorCode::kTransport, "only http:// endpoints are supported");
  }
  const int port = m[4].matched ? std::stoi(m[4]) : 80;
  const std::string path = m[5].matched ? m[5].str() : "/";

  httplib::Client client(m[2].str(), port);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(request.timeout);
  const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(request.timeout - secs);
  client.set_connection_timeout(secs.count(), usecs.count());
  client.set_read_timeout(secs.count(), usecs.count());
  client.set_write_timeout(secs.count(), usecs.count());

  httplib::Headers headers;
  if (!request.key.empty()) headers.emplace("Authorization", "Bearer " + request.key);
  const nlohmann::json body = {{"prompt", request.prompt},
                               {"max_tokens", request.max_tokens},
                               {"temperature", request.temperature}};
  const auto started = std::chrono::steady_clock::now();
  const auto res = client.Post(path, headers, body.dump(), "application/json");
  if (!res) {
    const auto err = res.error();
    const auto elapsed = std::chrono::steady_clock::now() - started;
    // A read failure that took the whole budget is the read timeout firing.
    if (err == httplib::Error::ConnectionTimeout ||
        (err == httplib::Error::Read && elapsed >= request.timeout * 9 / 10)) {
      throw Error(ErrorCode::kTimeout, "llm request timed out: " + httplib::to_string(err));
    }
    throw Error(ErrorCode::kTransport, "llm request failed: " + httplib::to_string(err));
  }
  if (res->status < 200 || res->status >= 300) {
    throw Error(ErrorCode::kTransport, "llm endpoint returned HTTP " + std::to_string(res->status));
  }
  try {
    const auto j = nlohmann::json::parse(res->body);
    const std::string text(trim(j.at("completion").get<std::string>()));
    if (text.empty()) throw Error(ErrorCode::kTransport, "llm returned an empty completion");
    return {text, CaptionKind::kCameraCharacter};
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kTransport, std::string("malformed llm response: ") + e.what());
  }
}

}  // namespace cinetraj
