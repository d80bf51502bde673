#ifndef VISAGE_DATASET_HPP
#define VISAGE_DATASET_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "visage/tensor.hpp"

namespace visage {

/// One labeled face image. gender is 0 = male, 1 = female; raw_gender is
/// the value parsed from the filename and may be an invalid class (3)
/// until filtering runs.
struct FaceRecord {
  std::string path;
  int age = 0;
  int gender = 0;
  int raw_gender = 0;
};

struct ProvenanceStep {
  std::string name;
  nlohmann::json params;
  std::int64_t in_count = 0;
  std::int64_t out_count = 0;
};

/// Ordered record collection with the history of pipeline steps that
/// produced it. Consecutive step counts must chain (each step's output
/// count is the next step's input count).
struct Manifest {
  std::uint64_t seed = 0;
  std::vector<ProvenanceStep> steps;
  std::vector<FaceRecord> records;
};

struct ParsedName {
  int age = 0;
  int raw_gender = 0;
  std::optional<int> race;
  std::optional<std::string> datestamp;
};

/// Splits a UTKFace-style name "age_gender[_race[_datestamp]].ext" on
/// underscores; everything from the first dot on is ignored. Fewer than
/// two fields or non-numeric age/gender raise ParseError with the name.
ParsedName parse_utk_filename(const std::string& name);

/// Lists the directory, sorts filenames lexicographically, and keeps every
/// file whose name parses and whose age lies in [0,116]. Unparseable files
/// are counted in the step params, not fatal.
Manifest ingest_directory(const std::string& dir);

/// Keeps records whose raw gender is 0 or 1.
Manifest filter_invalid_gender(const Manifest& m);

/// Subsamples records with age in [low_age, high_age] down to exactly
/// round(keep_frac x group size), chosen by a seeded shuffle; all other
/// records and the original relative order are preserved.
Manifest rebalance_age(const Manifest& m, int low_age = 1, int high_age = 4,
                       double keep_frac = 0.2, std::uint64_t seed = 0);

/// Seeded shuffle, then a cut at round(train_frac x n): the first part
/// trains, the rest tests. Throws DomainError when the manifest is empty,
/// the fraction is out of (0,1), or either side would be empty.
std::pair<Manifest, Manifest> holdout_split(const Manifest& m, double train_frac,
                                            std::uint64_t seed);

/// Decodes the record's image and resizes to a [3 x 200 x 200] tensor of
/// raw values in [0,255]. The second form resizes to an explicit target.
Tensor load_image_tensor(const FaceRecord& r);
Tensor load_image_tensor(const FaceRecord& r, int out_h, int out_w);

/// Fixed-range min-max scaling of 8-bit pixel values onto [0,1].
Tensor normalize(const Tensor& t);

/// Age label planted by the synthetic generator for a given mean
/// brightness: round(b / 255 x 80).
int synthetic_age_label(double brightness);

/// Writes n PNG images whose labels are recoverable functions of their
/// pixels: age encodes mean brightness, gender encodes which of the red or
/// blue channel dominates (means separated by 44). Filenames follow the
/// UTKFace grammar.
Manifest generate_synthetic(std::uint64_t seed, int n, const std::string& out_dir);

void write_manifest(const std::string& path, const Manifest& m);
Manifest read_manifest(const std::string& path);
std::string manifest_to_json_text(const Manifest& m);

/// Checks the provenance chain (step i output count = step i+1 input
/// count, last output = record count); throws ParseError on violation.
void validate_manifest(const Manifest& m);

}  // namespace visage

#endif
