#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cbench/util.hpp"
#include "json.hpp"

namespace cbench {

using json = nlohmann::json;

enum class Tier { god, high, ordinary };

/// Comment Art dimensions: rhetorical techniques, divergent associations,
/// clever writing techniques, interactive virality, emotional resonance.
enum class Dimension { RT, DA, WT, IV, ER };

std::string_view to_string(Tier t);
std::string_view to_string(Dimension d);
std::optional<Tier> parse_tier(std::string_view s);
std::optional<Dimension> parse_dimension(std::string_view s);

struct ArtTag {
  Dimension dimension = Dimension::RT;
  std::string subcategory;

  bool operator==(const ArtTag&) const = default;
  auto operator<=>(const ArtTag&) const = default;
};

struct Comment {
  std::string comment_id;
  std::string text;
  std::int64_t likes = 0;
  Tier tier = Tier::ordinary;
  std::vector<ArtTag> tags;
  /// Human-written justification for the tags; only god comments carry one.
  std::string explanation;

  bool operator==(const Comment&) const = default;
};

struct VideoRecord {
  std::string video_id;
  std::string title;
  double duration_s = 0.0;
  std::string category;
  std::string subcategory;
  std::string ocr_text;
  std::string subtitle_text;
  std::vector<std::string> frame_paths;
  std::vector<Comment> comments;

  bool operator==(const VideoRecord&) const = default;

  std::vector<const Comment*> comments_of(Tier tier) const;
  /// The most-liked god comment (ties: smallest comment_id), or nullptr.
  const Comment* top_god() const;
};

class UnknownTagError : public Error {
 public:
  using Error::Error;
};

/// The closed Comment Art tag table plus the video category list.
class Taxonomy {
 public:
  static Taxonomy from_json(const json& j);
  static Taxonomy load(const std::string& path);
  /// The table shipped in data/taxonomy.json.
  static const Taxonomy& builtin();

  const std::string& version() const { return version_; }
  const std::vector<std::string>& categories() const { return categories_; }
  bool is_category(std::string_view name) const;

  /// Case-insensitive lookup of a canonical or localized subcategory name.
  ArtTag parse_tag(std::string_view text) const;
  std::optional<Dimension> dimension_of(std::string_view subcategory) const;
  const std::vector<std::string>& subcategories(Dimension d) const;
  std::size_t subcategory_count() const;

 private:
  std::string version_;
  std::map<Dimension, std::vector<std::string>> table_;
  std::map<std::string, std::string> aliases_;
  std::vector<std::string> categories_;
};

struct Violation {
  std::string field;
  std::string rule;
};

struct ValidationReport {
  std::vector<Violation> violations;

  bool ok() const { return violations.empty(); }
  std::string summary() const;
  bool mentions(std::string_view rule_fragment) const;
};

/// Checks every record, comment and tag invariant. Never throws.
ValidationReport validate_record(const VideoRecord& record,
                                 const Taxonomy& taxonomy = Taxonomy::builtin());

struct Dataset {
  std::vector<VideoRecord> records;
  std::string taxonomy_version;

  bool operator==(const Dataset&) const = default;
};

struct LineError {
  std::size_t line = 0;
  std::string message;
};

struct LoadResult {
  Dataset dataset;
  std::vector<LineError> errors;

  bool ok() const { return errors.empty(); }
};

class DatasetError : public Error {
 public:
  using Error::Error;
};

/// Parses a line-delimited record file. Records that fail to parse or
/// validate are dropped and reported with their 1-based line number.
/// Throws DatasetError when the file cannot be read.
LoadResult load_dataset(const std::string& path,
                        const Taxonomy& taxonomy = Taxonomy::builtin());
LoadResult parse_dataset(std::string_view content,
                         const Taxonomy& taxonomy = Taxonomy::builtin());

/// One record per line, keys sorted, so equal datasets serialize identically.
std::string serialize_dataset(const Dataset& dataset);

json to_json(const ArtTag& tag);
json to_json(const Comment& c);
json to_json(const VideoRecord& r);
/// Throws DatasetError on structural problems; tag table membership is left
/// to validate_record.
VideoRecord record_from_json(const json& j, const Taxonomy& taxonomy = Taxonomy::builtin());

struct DatasetSplit {
  std::vector<VideoRecord> train;
  std::vector<VideoRecord> validation;
  std::vector<VideoRecord> test;

  /// {"train": [ids], "validation": [ids], "test": [ids]}
  json manifest() const;
};

/// 10:1:1 stratified split. Validation and test each get floor(N/12) records,
/// apportioned over categories by largest remainder; train takes the rest.
/// Each part keeps the input order.
DatasetSplit split_dataset(const Dataset& dataset, std::uint64_t seed);

struct SplitSizes {
  std::size_t train = 0;
  std::size_t validation = 0;
  std::size_t test = 0;
};
SplitSizes split_sizes(std::size_t n);

}  // namespace cbench
