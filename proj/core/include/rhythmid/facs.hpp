// SPDX-License-Identifier: Apache-2.0
/**
 * @file   facs.hpp
 * @brief  Time-aligned character transcripts and their frame-aligned
 *         character sequence (FACS) encoding.
 *
 * A FACS assigns one token per fixed-length frame: the character whose
 * aligned segment contains the frame midpoint, or the null token when no
 * segment does. Segments are half-open intervals [start, end).
 */
#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace rhythmid {

inline constexpr std::int32_t kPadId = 0;
inline constexpr std::int32_t kNullId = 1;
inline constexpr std::int32_t kUnkId = 2;
inline constexpr std::int32_t kFirstSymbolId = 3;
inline constexpr int kDefaultFrameMs = 20;

inline constexpr std::string_view kPadSymbol = "<pad>";
inline constexpr std::string_view kNullSymbol = "*";
inline constexpr std::string_view kUnkSymbol = "<unk>";
/// How UNK renders inside a FACS string (U+FFFD).
inline constexpr std::string_view kUnkGlyph = "\xEF\xBF\xBD";

struct CharSegment {
  std::string symbol;  ///< one UTF-8 code point, lowercased
  double start_s = 0.0;
  double end_s = 0.0;
};

struct AlignedUtterance {
  std::string utt_id;
  std::string speaker_id;
  double duration_s = 0.0;
  std::vector<CharSegment> segments;
};

/// Per-reason tally of rejected alignment records.
struct DiscardReport {
  std::map<std::string, std::size_t> counts;
  /// (1-based line number, reason) for each rejected record.
  std::vector<std::pair<std::size_t, std::string>> records;

  std::size_t total() const;
  void add(std::size_t line, const std::string& reason);
};

struct AlignmentParseResult {
  std::vector<AlignedUtterance> utterances;
  DiscardReport discards;
};

/// Reads the JSON-lines alignment format, one utterance per line:
/// {"utt_id", "speaker", "duration", "chars": [{"c", "start", "end"}, ...]}.
/// Invalid records are skipped and tallied under one of: malformed,
/// bad_duration, non_monotonic, out_of_range, overlap, duplicate_id.
/// Whitespace characters are treated as unaligned and dropped.
AlignmentParseResult parse_alignment_file(std::istream& in);
/// Throws std::runtime_error if the file cannot be opened.
AlignmentParseResult parse_alignment_file(const std::filesystem::path& path);

/// Returns the reason an utterance violates its invariants, if any.
std::optional<std::string> validate_utterance(const AlignedUtterance& utt);

void write_alignment_file(std::ostream& out, std::span<const AlignedUtterance> utterances);

/// Lowercases a symbol (ASCII and Latin-1 letters).
std::string normalize_symbol(std::string_view symbol);
/// Splits UTF-8 text into code points; throws on invalid encoding.
std::vector<std::string> split_utf8(std::string_view text);

class Vocabulary {
 public:
  /// Reserved entries plus `symbols`, which are normalized, deduplicated and
  /// assigned ids in lexicographic (byte) order.
  static Vocabulary from_symbols(std::vector<std::string> symbols);
  /// Parses the `id<TAB>symbol` file format.
  static Vocabulary read(std::istream& in);

  std::size_t size() const { return symbols_.size(); }
  /// Token id for a corpus symbol; UNK when absent.
  std::int32_t id_of(std::string_view symbol) const;
  std::optional<std::int32_t> find(std::string_view symbol) const;
  /// Vocabulary entry text (`<pad>`, `*`, `<unk>`, or the character).
  const std::string& symbol_of(std::int32_t id) const;
  /// FACS glyph for an id: `*` for NULL, U+FFFD for UNK. PAD has no glyph.
  std::string_view glyph_of(std::int32_t id) const;
  /// Inverse of glyph_of; nullopt for anything unresolvable.
  std::optional<std::int32_t> id_of_glyph(std::string_view glyph) const;

  void write(std::ostream& out) const;
  std::string serialize() const;
  /// FNV-1a 64 over the serialized form.
  std::uint64_t fingerprint() const;

  bool operator==(const Vocabulary& other) const { return symbols_ == other.symbols_; }

 private:
  std::vector<std::string> symbols_;
  std::unordered_map<std::string, std::int32_t> ids_;
};

/// Reserved entries plus every distinct normalized symbol in the corpus.
/// Throws std::invalid_argument for an empty corpus.
Vocabulary build_vocabulary(std::span<const AlignedUtterance> utterances);

struct FacsSequence {
  std::vector<std::int32_t> token_ids;
  int frame_ms = kDefaultFrameMs;
  std::string utt_id;
  std::string speaker_id;
};

/// floor(duration_s * 1000 / frame_ms), tolerant of decimal round-off.
std::size_t frame_count(double duration_s, int frame_ms);

FacsSequence facs_encode(const AlignedUtterance& utt, const Vocabulary& vocab,
                         int frame_ms = kDefaultFrameMs);

/// One glyph per token. Throws std::out_of_range for PAD or unknown ids.
std::string facs_to_string(const FacsSequence& seq, const Vocabulary& vocab);

/// Inverse of facs_to_string. Throws std::invalid_argument on an
/// unresolvable character.
std::vector<std::int32_t> facs_from_string(std::string_view text, const Vocabulary& vocab);

struct SymbolRun {
  std::string glyph;
  std::int32_t token_id = 0;
  std::size_t frames = 0;

  bool operator==(const SymbolRun&) const = default;
};

/// Maximal runs of identical glyphs as (glyph, frame count) pairs.
std::vector<SymbolRun> facs_decode(std::string_view text, const Vocabulary& vocab);

/// Keeps the first max_tokens tokens. Throws for max_tokens == 0.
FacsSequence truncate(const FacsSequence& seq, std::size_t max_tokens);

/// `utt_id<TAB>speaker_id<TAB>facs` lines.
void write_facs_corpus(std::ostream& out, std::span<const FacsSequence> corpus,
                       const Vocabulary& vocab);
std::vector<FacsSequence> read_facs_corpus(std::istream& in, const Vocabulary& vocab,
                                           int frame_ms = kDefaultFrameMs);

}  // namespace rhythmid
