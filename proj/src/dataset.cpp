#include "visage/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <system_error>

#include "visage/errors.hpp"
#include "visage/image.hpp"
#include "visage/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace visage {
namespace {

// Stream tags keep the per-op generators independent even when the same
// user seed feeds several pipeline stages.
constexpr std::uint64_t kRebalanceStream = 1;
constexpr std::uint64_t kSplitStream = 2;
constexpr std::uint64_t kSynthStream = 3;

constexpr int kMaxAge = 116;
constexpr int kImageSide = 200;

std::optional<int> parse_uint_field(const std::string& s) {
  if (s.empty() || s.size() > 9) return std::nullopt;
  int value = 0;
  const char* end = s.data() + s.size();
  const auto [ptr, ec] = std::from_chars(s.data(), end, value);
  if (ec != std::errc{} || ptr != end || value < 0) return std::nullopt;
  return value;
}

ProvenanceStep make_step(std::string name, json params, std::int64_t in_count,
                         std::int64_t out_count) {
  ProvenanceStep s;
  s.name = std::move(name);
  s.params = std::move(params);
  s.in_count = in_count;
  s.out_count = out_count;
  return s;
}

}  // namespace

ParsedName parse_utk_filename(const std::string& name) {
  const std::string stem = name.substr(0, name.find('.'));
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t us = stem.find('_', start);
    fields.push_back(stem.substr(start, us - start));
    if (us == std::string::npos) break;
    start = us + 1;
  }
  if (fields.size() < 2)
    throw ParseError("malformed face filename '" + name + "': expected age_gender[_race[_date]]");
  const auto age = parse_uint_field(fields[0]);
  const auto gender = parse_uint_field(fields[1]);
  if (!age || !gender)
    throw ParseError("malformed face filename '" + name + "': non-numeric age or gender");
  ParsedName p;
  p.age = *age;
  p.raw_gender = *gender;
  if (fields.size() >= 3) p.race = parse_uint_field(fields[2]);
  if (fields.size() >= 4) p.datestamp = fields[3];
  return p;
}

Manifest ingest_directory(const std::string& dir) {
  std::error_code ec;
  fs::directory_iterator it(dir, ec);
  if (ec) throw IoError("cannot read directory '" + dir + "': " + ec.message());

  std::vector<std::string> names;
  for (const auto& entry : it)
    if (entry.is_regular_file()) names.push_back(entry.path().filename().string());
  std::sort(names.begin(), names.end());

  Manifest m;
  std::int64_t skipped = 0;
  for (const std::string& name : names) {
    try {
      const ParsedName p = parse_utk_filename(name);
      if (p.age > kMaxAge) {
        ++skipped;
        continue;
      }
      FaceRecord r;
      r.path = (fs::path(dir) / name).string();
      r.age = p.age;
      r.gender = p.raw_gender;
      r.raw_gender = p.raw_gender;
      m.records.push_back(std::move(r));
    } catch (const ParseError&) {
      ++skipped;
    }
  }
  m.steps.push_back(make_step("ingest", json{{"dir", dir}, {"skipped", skipped}},
                              static_cast<std::int64_t>(names.size()),
                              static_cast<std::int64_t>(m.records.size())));
  return m;
}

Manifest filter_invalid_gender(const Manifest& m) {
  Manifest out;
  out.seed = m.seed;
  out.steps = m.steps;
  for (const FaceRecord& r : m.records)
    if (r.raw_gender == 0 || r.raw_gender == 1) out.records.push_back(r);
  const auto removed =
      static_cast<std::int64_t>(m.records.size()) - static_cast<std::int64_t>(out.records.size());
  out.steps.push_back(make_step("filter_gender", json{{"removed", removed}},
                                static_cast<std::int64_t>(m.records.size()),
                                static_cast<std::int64_t>(out.records.size())));
  return out;
}

Manifest rebalance_age(const Manifest& m, int low_age, int high_age, double keep_frac,
                       std::uint64_t seed) {
  if (!(keep_frac > 0.0 && keep_frac <= 1.0))
    throw DomainError("rebalance_age: keep fraction must be in (0,1], got " +
                      std::to_string(keep_frac));
  if (low_age > high_age)
    throw DomainError("rebalance_age: age band " + std::to_string(low_age) + ".." +
                      std::to_string(high_age) + " is empty");

  std::vector<std::size_t> group;
  for (std::size_t i = 0; i < m.records.size(); ++i)
    if (m.records[i].age >= low_age && m.records[i].age <= high_age) group.push_back(i);

  const std::size_t group_n = group.size();
  const auto keep_n =
      static_cast<std::size_t>(round_half_away(keep_frac * static_cast<double>(group_n)));
  Rng rng(mix_seed(seed, kRebalanceStream));
  rng.shuffle(group);
  group.resize(std::min(keep_n, group_n));
  std::sort(group.begin(), group.end());

  Manifest out;
  out.seed = seed;
  out.steps = m.steps;
  std::size_t next = 0;
  for (std::size_t i = 0; i < m.records.size(); ++i) {
    const FaceRecord& r = m.records[i];
    const bool in_group = r.age >= low_age && r.age <= high_age;
    if (in_group) {
      if (next < group.size() && group[next] == i) {
        out.records.push_back(r);
        ++next;
      }
    } else {
      out.records.push_back(r);
    }
  }
  out.steps.push_back(make_step("rebalance_age",
                                json{{"low_age", low_age},
                                     {"high_age", high_age},
                                     {"keep_frac", keep_frac},
                                     {"seed", seed},
                                     {"group", static_cast<std::int64_t>(group_n)},
                                     {"kept", static_cast<std::int64_t>(group.size())}},
                                static_cast<std::int64_t>(m.records.size()),
                                static_cast<std::int64_t>(out.records.size())));
  return out;
}

std::pair<Manifest, Manifest> holdout_split(const Manifest& m, double train_frac,
                                            std::uint64_t seed) {
  if (m.records.empty()) throw DomainError("holdout_split: empty manifest");
  if (!(train_frac > 0.0 && train_frac < 1.0))
    throw DomainError("holdout_split: train fraction must be in (0,1), got " +
                      std::to_string(train_frac));
  const std::size_t n = m.records.size();
  const auto train_n =
      static_cast<std::size_t>(round_half_away(train_frac * static_cast<double>(n)));
  if (train_n == 0 || train_n >= n)
    throw DomainError("holdout_split: " + std::to_string(train_n) + "/" +
                      std::to_string(n - train_n) + " split leaves one side empty");

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(mix_seed(seed, kSplitStream));
  rng.shuffle(order);

  const auto side = [&](const char* tag, std::size_t from, std::size_t to) {
    Manifest out;
    out.seed = seed;
    out.steps = m.steps;
    for (std::size_t i = from; i < to; ++i) out.records.push_back(m.records[order[i]]);
    out.steps.push_back(make_step(
        "split", json{{"train_frac", train_frac}, {"seed", seed}, {"side", tag}},
        static_cast<std::int64_t>(n), static_cast<std::int64_t>(to - from)));
    return out;
  };
  return {side("train", 0, train_n), side("test", train_n, n)};
}

Tensor load_image_tensor(const FaceRecord& r) {
  return load_image_tensor(r, kImageSide, kImageSide);
}

Tensor load_image_tensor(const FaceRecord& r, int out_h, int out_w) {
  return resize_bilinear(image_to_chw(decode_image(r.path)), out_h, out_w);
}

Tensor normalize(const Tensor& t) {
  Tensor out(t.shape());
  for (std::size_t i = 0; i < t.size(); ++i) out[i] = t[i] / 255.0f;
  return out;
}

int synthetic_age_label(double brightness) {
  return static_cast<int>(round_half_away(brightness / 255.0 * 80.0));
}

Manifest generate_synthetic(std::uint64_t seed, int n, const std::string& out_dir) {
  if (n < 1) throw DomainError("generate_synthetic: need n >= 1, got " + std::to_string(n));
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create directory '" + out_dir + "': " + ec.message());

  Rng rng(mix_seed(seed, kSynthStream));
  Manifest m;
  m.seed = seed;
  for (int i = 0; i < n; ++i) {
    // Brightness stays in [30,225] so the +/-22 channel separation and the
    // +/-8 zero-mean checkerboard texture both fit in 8 bits.
    const int base = 30 + static_cast<int>(rng.next_below(196));
    const int gender = i % 2;
    const int red = gender == 0 ? base + 22 : base - 22;
    const int blue = gender == 0 ? base - 22 : base + 22;
    Image img;
    img.width = kImageSide;
    img.height = kImageSide;
    img.channels = 3;
    img.pixels.resize(static_cast<std::size_t>(kImageSide) * kImageSide * 3);
    for (int y = 0; y < kImageSide; ++y)
      for (int x = 0; x < kImageSide; ++x) {
        const int tex = ((x + y) & 1) == 0 ? 8 : -8;
        std::uint8_t* px =
            img.pixels.data() + (static_cast<std::size_t>(y) * kImageSide + x) * 3;
        px[0] = static_cast<std::uint8_t>(red + tex);
        px[1] = static_cast<std::uint8_t>(base + tex);
        px[2] = static_cast<std::uint8_t>(blue + tex);
      }
    // The red/blue offsets cancel, so the image's true mean brightness is
    // exactly `base` and the planted age follows from it.
    const int age = synthetic_age_label(static_cast<double>(base));
    const std::string name = std::to_string(age) + "_" + std::to_string(gender) + "_0_" +
                             std::to_string(i) + ".png";
    const std::string path = (fs::path(out_dir) / name).string();
    encode_png(path, img);
    FaceRecord r;
    r.path = path;
    r.age = age;
    r.gender = gender;
    r.raw_gender = gender;
    m.records.push_back(std::move(r));
  }
  m.steps.push_back(make_step("synthesize",
                              json{{"seed", seed}, {"n", n}, {"dir", out_dir}}, 0,
                              static_cast<std::int64_t>(m.records.size())));
  return m;
}

std::string manifest_to_json_text(const Manifest& m) {
  json j;
  j["seed"] = m.seed;
  j["steps"] = json::array();
  for (const ProvenanceStep& s : m.steps)
    j["steps"].push_back(json{{"name", s.name},
                              {"params", s.params},
                              {"in_count", s.in_count},
                              {"out_count", s.out_count}});
  j["records"] = json::array();
  for (const FaceRecord& r : m.records)
    j["records"].push_back(json{{"path", r.path}, {"age", r.age}, {"gender", r.gender}});
  return j.dump(2) + "\n";
}

void write_manifest(const std::string& path, const Manifest& m) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  os << manifest_to_json_text(m);
  if (!os) throw IoError("write failed for '" + path + "'");
}

Manifest read_manifest(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open '" + path + "'");
  Manifest m;
  try {
    const json j = json::parse(is);
    m.seed = j.at("seed").get<std::uint64_t>();
    for (const json& js : j.at("steps")) {
      ProvenanceStep s;
      s.name = js.at("name").get<std::string>();
      s.params = js.at("params");
      s.in_count = js.at("in_count").get<std::int64_t>();
      s.out_count = js.at("out_count").get<std::int64_t>();
      m.steps.push_back(std::move(s));
    }
    for (const json& jr : j.at("records")) {
      FaceRecord r;
      r.path = jr.at("path").get<std::string>();
      r.age = jr.at("age").get<int>();
      r.gender = jr.at("gender").get<int>();
      r.raw_gender = r.gender;
      m.records.push_back(std::move(r));
    }
  } catch (const json::exception& e) {
    throw ParseError("manifest '" + path + "': " + e.what());
  }
  validate_manifest(m);
  return m;
}

void validate_manifest(const Manifest& m) {
  for (std::size_t i = 0; i + 1 < m.steps.size(); ++i)
    if (m.steps[i].out_count != m.steps[i + 1].in_count)
      throw ParseError("manifest provenance broken: step '" + m.steps[i].name + "' emits " +
                       std::to_string(m.steps[i].out_count) + " records but step '" +
                       m.steps[i + 1].name + "' consumes " +
                       std::to_string(m.steps[i + 1].in_count));
  if (!m.steps.empty() &&
      m.steps.back().out_count != static_cast<std::int64_t>(m.records.size()))
    throw ParseError("manifest provenance broken: last step emits " +
                     std::to_string(m.steps.back().out_count) + " records but " +
                     std::to_string(m.records.size()) + " are present");
}

}  // namespace visage
