// SPDX-License-Identifier: Apache-2.0
#include "rhythmid/facs.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include <json.hpp>

namespace rhythmid {

using nlohmann::json;

std::size_t DiscardReport::total() const {
  std::size_t n = 0;
  for (const auto& [reason, count] : counts) n += count;
  return n;
}

void DiscardReport::add(std::size_t line, const std::string& reason) {
  ++counts[reason];
  records.emplace_back(line, reason);
}

std::vector<std::string> split_utf8(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    const auto lead = static_cast<unsigned char>(text[i]);
    std::size_t width = 0;
    if (lead < 0x80) {
      width = 1;
    } else if ((lead >> 5) == 0x6) {
      width = 2;
    } else if ((lead >> 4) == 0xE) {
      width = 3;
    } else if ((lead >> 3) == 0x1E) {
      width = 4;
    } else {
      throw std::invalid_argument("invalid UTF-8 lead byte at offset " + std::to_string(i));
    }
    if (i + width > text.size()) throw std::invalid_argument("truncated UTF-8 sequence");
    for (std::size_t j = 1; j < width; ++j) {
      if ((static_cast<unsigned char>(text[i + j]) >> 6) != 0x2) {
        throw std::invalid_argument("invalid UTF-8 continuation at offset " +
                                    std::to_string(i + j));
      }
    }
    out.emplace_back(text.substr(i, width));
    i += width;
  }
  return out;
}

std::string normalize_symbol(std::string_view symbol) {
  std::string out(symbol);
  if (out.size() == 1) {
    unsigned char c = static_cast<unsigned char>(out[0]);
    if (c >= 'A' && c <= 'Z') out[0] = static_cast<char>(c - 'A' + 'a');
  } else if (out.size() == 2 && static_cast<unsigned char>(out[0]) == 0xC3) {
    // U+00C0..U+00DE (except U+00D7) fold to U+00E0..U+00FE.
    unsigned char c = static_cast<unsigned char>(out[1]);
    if (c >= 0x80 && c <= 0x9E && c != 0x97) out[1] = static_cast<char>(c + 0x20);
  }
  return out;
}

namespace {

bool is_unaligned_symbol(std::string_view s) {
  if (s.size() == 1) return std::isspace(static_cast<unsigned char>(s[0])) != 0 || s == kNullSymbol;
  return s == kUnkGlyph || s == "\xC2\xA0";  // U+00A0 no-break space
}

struct RecordError {
  std::string reason;
};

AlignedUtterance utterance_from_json(const json& j) {
  auto require = [&](const char* key) -> const json& {
    if (!j.is_object() || !j.contains(key)) throw RecordError{"malformed"};
    return j.at(key);
  };
  const json& utt_id = require("utt_id");
  const json& speaker = require("speaker");
  const json& duration = require("duration");
  const json& chars = require("chars");
  if (!utt_id.is_string() || !speaker.is_string() || !duration.is_number() ||
      !chars.is_array()) {
    throw RecordError{"malformed"};
  }
  AlignedUtterance utt;
  utt.utt_id = utt_id.get<std::string>();
  utt.speaker_id = speaker.get<std::string>();
  utt.duration_s = duration.get<double>();
  if (utt.utt_id.empty() || utt.speaker_id.empty()) throw RecordError{"malformed"};
  for (const json& c : chars) {
    if (!c.is_object() || !c.contains("c") || !c.contains("start") || !c.contains("end") ||
        !c.at("c").is_string() || !c.at("start").is_number() || !c.at("end").is_number()) {
      throw RecordError{"malformed"};
    }
    std::vector<std::string> points;
    try {
      points = split_utf8(c.at("c").get<std::string>());
    } catch (const std::invalid_argument&) {
      throw RecordError{"malformed"};
    }
    if (points.size() != 1) throw RecordError{"malformed"};
    std::string symbol = normalize_symbol(points[0]);
    if (is_unaligned_symbol(symbol)) continue;
    utt.segments.push_back({std::move(symbol), c.at("start").get<double>(),
                            c.at("end").get<double>()});
  }
  return utt;
}

}  // namespace

std::optional<std::string> validate_utterance(const AlignedUtterance& utt) {
  if (!std::isfinite(utt.duration_s) || utt.duration_s <= 0.0) return "bad_duration";
  const CharSegment* prev = nullptr;
  for (const auto& seg : utt.segments) {
    if (!std::isfinite(seg.start_s) || !std::isfinite(seg.end_s) || seg.end_s <= seg.start_s) {
      return "non_monotonic";
    }
    if (seg.start_s < 0.0 || seg.end_s > utt.duration_s) return "out_of_range";
    if (prev != nullptr) {
      if (seg.start_s < prev->start_s) return "non_monotonic";
      if (seg.start_s < prev->end_s) return "overlap";
    }
    prev = &seg;
  }
  return std::nullopt;
}

AlignmentParseResult parse_alignment_file(std::istream& in) {
  AlignmentParseResult result;
  std::unordered_set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    try {
      json j = json::parse(line);
      AlignedUtterance utt = utterance_from_json(j);
      if (auto reason = validate_utterance(utt)) throw RecordError{*reason};
      if (!seen.insert(utt.utt_id).second) throw RecordError{"duplicate_id"};
      result.utterances.push_back(std::move(utt));
    } catch (const RecordError& e) {
      result.discards.add(line_no, e.reason);
    } catch (const json::exception&) {
      result.discards.add(line_no, "malformed");
    }
  }
  if (in.bad()) throw std::runtime_error("I/O error while reading alignment records");
  return result;
}

AlignmentParseResult parse_alignment_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open alignment file " + path.string());
  return parse_alignment_file(in);
}

void write_alignment_file(std::ostream& out, std::span<const AlignedUtterance> utterances) {
  for (const auto& utt : utterances) {
    json chars = json::array();
    for (const auto& seg : utt.segments) {
      chars.push_back({{"c", seg.symbol}, {"start", seg.start_s}, {"end", seg.end_s}});
    }
    json j = {{"utt_id", utt.utt_id},
              {"speaker", utt.speaker_id},
              {"duration", utt.duration_s},
              {"chars", std::move(chars)}};
    out << j.dump() << '\n';
  }
}

Vocabulary Vocabulary::from_symbols(std::vector<std::string> symbols) {
  std::set<std::string> distinct;
  for (auto& s : symbols) {
    std::string n = normalize_symbol(s);
    if (n.empty() || is_unaligned_symbol(n) || n == kPadSymbol || n == kUnkSymbol) continue;
    distinct.insert(std::move(n));
  }
  Vocabulary v;
  v.symbols_ = {std::string(kPadSymbol), std::string(kNullSymbol), std::string(kUnkSymbol)};
  v.symbols_.insert(v.symbols_.end(), distinct.begin(), distinct.end());
  for (std::size_t i = 0; i < v.symbols_.size(); ++i) {
    v.ids_.emplace(v.symbols_[i], static_cast<std::int32_t>(i));
  }
  return v;
}

Vocabulary Vocabulary::read(std::istream& in) {
  std::vector<std::string> entries;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw std::invalid_argument("vocabulary line " + std::to_string(line_no) + ": missing tab");
    }
    std::size_t id = 0;
    try {
      std::size_t used = 0;
      id = std::stoul(line.substr(0, tab), &used);
      if (used != tab) throw std::invalid_argument("trailing characters");
    } catch (const std::exception&) {
      throw std::invalid_argument("vocabulary line " + std::to_string(line_no) + ": bad id");
    }
    if (id != entries.size()) {
      throw std::invalid_argument("vocabulary line " + std::to_string(line_no) + ": expected id " +
                                  std::to_string(entries.size()));
    }
    entries.push_back(line.substr(tab + 1));
  }
  if (entries.size() < 3 || entries[kPadId] != kPadSymbol || entries[kNullId] != kNullSymbol ||
      entries[kUnkId] != kUnkSymbol) {
    throw std::invalid_argument("vocabulary file lacks the reserved <pad>, *, <unk> entries");
  }
  std::vector<std::string> rest(entries.begin() + kFirstSymbolId, entries.end());
  Vocabulary v = from_symbols(rest);
  if (v.symbols_ != entries) {
    throw std::invalid_argument("vocabulary file entries are not normalized, sorted and distinct");
  }
  return v;
}

std::int32_t Vocabulary::id_of(std::string_view symbol) const {
  return find(symbol).value_or(kUnkId);
}

std::optional<std::int32_t> Vocabulary::find(std::string_view symbol) const {
  auto it = ids_.find(normalize_symbol(symbol));
  if (it == ids_.end() || it->second < kFirstSymbolId) return std::nullopt;
  return it->second;
}

const std::string& Vocabulary::symbol_of(std::int32_t id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= symbols_.size()) {
    throw std::out_of_range("token id " + std::to_string(id) + " not in vocabulary of size " +
                            std::to_string(symbols_.size()));
  }
  return symbols_[static_cast<std::size_t>(id)];
}

std::string_view Vocabulary::glyph_of(std::int32_t id) const {
  if (id == kPadId) throw std::out_of_range("PAD token has no FACS glyph");
  if (id == kUnkId) return kUnkGlyph;
  return symbol_of(id);
}

std::optional<std::int32_t> Vocabulary::id_of_glyph(std::string_view glyph) const {
  if (glyph == kNullSymbol) return kNullId;
  if (glyph == kUnkGlyph) return kUnkId;
  auto it = ids_.find(std::string(glyph));
  if (it == ids_.end() || it->second < kFirstSymbolId) return std::nullopt;
  return it->second;
}

void Vocabulary::write(std::ostream& out) const { out << serialize(); }

std::string Vocabulary::serialize() const {
  std::string s;
  for (std::size_t i = 0; i < symbols_.size(); ++i) {
    s += std::to_string(i);
    s += '\t';
    s += symbols_[i];
    s += '\n';
  }
  return s;
}

std::uint64_t Vocabulary::fingerprint() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : serialize()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

Vocabulary build_vocabulary(std::span<const AlignedUtterance> utterances) {
  if (utterances.empty()) throw std::invalid_argument("cannot build a vocabulary from no utterances");
  std::vector<std::string> symbols;
  for (const auto& utt : utterances) {
    for (const auto& seg : utt.segments) symbols.push_back(seg.symbol);
  }
  return Vocabulary::from_symbols(std::move(symbols));
}

std::size_t frame_count(double duration_s, int frame_ms) {
  if (frame_ms <= 0) throw std::invalid_argument("frame_ms must be positive");
  if (!(duration_s > 0.0)) return 0;
  // 16.06 * 1000 / 20 evaluates to 802.9999999999999; the slack absorbs
  // decimal round-off without moving any genuine frame boundary.
  return static_cast<std::size_t>(std::floor(duration_s * 1000.0 / frame_ms + 1e-9));
}

FacsSequence facs_encode(const AlignedUtterance& utt, const Vocabulary& vocab, int frame_ms) {
  if (frame_ms <= 0) throw std::invalid_argument("frame_ms must be positive");
  FacsSequence seq;
  seq.frame_ms = frame_ms;
  seq.utt_id = utt.utt_id;
  seq.speaker_id = utt.speaker_id;
  const std::size_t frames = frame_count(utt.duration_s, frame_ms);
  seq.token_ids.assign(frames, kNullId);

  std::vector<std::int32_t> seg_ids;
  seg_ids.reserve(utt.segments.size());
  for (const auto& seg : utt.segments) seg_ids.push_back(vocab.id_of(seg.symbol));

  // Segments are sorted and disjoint, so one forward sweep suffices.
  std::size_t s = 0;
  for (std::size_t k = 0; k < frames; ++k) {
    const double mid_s =
        (static_cast<double>(k) * frame_ms + frame_ms / 2.0) / 1000.0;
    while (s < utt.segments.size() && utt.segments[s].end_s <= mid_s) ++s;
    if (s < utt.segments.size() && utt.segments[s].start_s <= mid_s) {
      seq.token_ids[k] = seg_ids[s];
    }
  }
  return seq;
}

std::string facs_to_string(const FacsSequence& seq, const Vocabulary& vocab) {
  std::string out;
  out.reserve(seq.token_ids.size());
  for (auto id : seq.token_ids) out += vocab.glyph_of(id);
  return out;
}

std::vector<std::int32_t> facs_from_string(std::string_view text, const Vocabulary& vocab) {
  std::vector<std::int32_t> ids;
  for (const auto& glyph : split_utf8(text)) {
    auto id = vocab.id_of_glyph(glyph);
    if (!id) throw std::invalid_argument("FACS character '" + glyph + "' is not in the vocabulary");
    ids.push_back(*id);
  }
  return ids;
}

std::vector<SymbolRun> facs_decode(std::string_view text, const Vocabulary& vocab) {
  std::vector<SymbolRun> runs;
  for (const auto& glyph : split_utf8(text)) {
    auto id = vocab.id_of_glyph(glyph);
    if (!id) throw std::invalid_argument("FACS character '" + glyph + "' is not in the vocabulary");
    if (!runs.empty() && runs.back().token_id == *id) {
      ++runs.back().frames;
    } else {
      runs.push_back({glyph, *id, 1});
    }
  }
  return runs;
}

FacsSequence truncate(const FacsSequence& seq, std::size_t max_tokens) {
  if (max_tokens == 0) throw std::invalid_argument("truncate: max_tokens must be positive");
  FacsSequence out = seq;
  if (out.token_ids.size() > max_tokens) out.token_ids.resize(max_tokens);
  return out;
}

void write_facs_corpus(std::ostream& out, std::span<const FacsSequence> corpus,
                       const Vocabulary& vocab) {
  for (const auto& seq : corpus) {
    out << seq.utt_id << '\t' << seq.speaker_id << '\t' << facs_to_string(seq, vocab) << '\n';
  }
}

std::vector<FacsSequence> read_facs_corpus(std::istream& in, const Vocabulary& vocab,
                                           int frame_ms) {
  std::vector<FacsSequence> corpus;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
    if (t2 == std::string::npos) {
      throw std::invalid_argument("FACS corpus line " + std::to_string(line_no) +
                                  ": expected utt_id<TAB>speaker<TAB>facs");
    }
    FacsSequence seq;
    seq.frame_ms = frame_ms;
    seq.utt_id = line.substr(0, t1);
    seq.speaker_id = line.substr(t1 + 1, t2 - t1 - 1);
    try {
      seq.token_ids = facs_from_string(std::string_view(line).substr(t2 + 1), vocab);
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument("FACS corpus line " + std::to_string(line_no) + ": " + e.what());
    }
    corpus.push_back(std::move(seq));
  }
  if (in.bad()) throw std::runtime_error("I/O error while reading FACS corpus");
  return corpus;
}

}  // namespace rhythmid
