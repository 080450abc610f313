#include "transgrec/io.hpp"

#include "json.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "transgrec/error.hpp"
#include "transgrec/features.hpp"

namespace transgrec {

using json = nlohmann::json;

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  if (quoted) throw DataError("unterminated quoted field");
  out.push_back(std::move(cur));
  return out;
}

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

std::string fmt_real(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

double parse_real(const std::string& s, const std::string& path, std::size_t line,
                  const char* field) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size() || !std::isfinite(v)) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw DataError(path + ":" + std::to_string(line) + ": invalid " + field + " '" + s + "'");
  }
}

std::ifstream open_in(const std::string& path, std::ios::openmode mode = std::ios::in) {
  std::ifstream in(path, mode);
  if (!in) throw DataError("cannot open '" + path + "'");
  return in;
}

std::ofstream open_out(const std::string& path, std::ios::openmode mode = std::ios::out) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  std::ofstream out(path, mode | std::ios::trunc);
  if (!out) throw DataError("cannot write '" + path + "'");
  return out;
}

}  // namespace

CsvTable read_csv(const std::string& path) {
  auto in = open_in(path);
  CsvTable t;
  std::string line;
  std::size_t n = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++n;
    if (n == 1 && line.size() >= 3 && std::memcmp(line.data(), "\xEF\xBB\xBF", 3) == 0) {
      line.erase(0, 3);
    }
    if (line.empty() || line == "\r") continue;
    std::vector<std::string> fields;
    try {
      fields = split_csv_line(line);
    } catch (const DataError& e) {
      throw DataError(path + ":" + std::to_string(n) + ": " + e.what());
    }
    if (!have_header) {
      t.header = std::move(fields);
      have_header = true;
      continue;
    }
    if (fields.size() != t.header.size()) {
      throw DataError(path + ":" + std::to_string(n) + ": expected " +
                      std::to_string(t.header.size()) + " fields, got " +
                      std::to_string(fields.size()));
    }
    t.rows.push_back(std::move(fields));
    t.line_numbers.push_back(n);
  }
  if (!have_header) throw DataError(path + ": empty file (no header)");
  return t;
}

std::vector<Annotation> read_annotations(const std::string& path) {
  const CsvTable t = read_csv(path);
  const bool with_ts = t.header.size() == 5;
  const std::vector<std::string> expected = {"user_id", "video_id", "t_start", "t_end"};
  if (t.header.size() < 4 || t.header.size() > 5 ||
      !std::equal(expected.begin(), expected.end(), t.header.begin()) ||
      (with_ts && t.header[4] != "timestamp")) {
    throw DataError(path + ":1: header must be user_id,video_id,t_start,t_end[,timestamp]");
  }
  std::vector<Annotation> out;
  out.reserve(t.rows.size());
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& f = t.rows[r];
    const std::size_t line = t.line_numbers[r];
    Annotation a;
    a.user_id = f[0];
    a.video_id = f[1];
    if (a.user_id.empty() || a.video_id.empty()) {
      throw DataError(path + ":" + std::to_string(line) + ": empty user or video id");
    }
    a.t_start = parse_real(f[2], path, line, "t_start");
    a.t_end = parse_real(f[3], path, line, "t_end");
    if (a.t_start < 0 || a.t_end <= a.t_start) {
      throw DataError(path + ":" + std::to_string(line) + ": t_end must exceed t_start >= 0");
    }
    if (with_ts && !f[4].empty()) a.timestamp = parse_real(f[4], path, line, "timestamp");
    out.push_back(std::move(a));
  }
  if (out.empty()) throw DataError(path + ": no annotation rows");
  return out;
}

void write_annotations(const std::vector<Annotation>& annotations, const std::string& path) {
  const bool with_ts = std::any_of(annotations.begin(), annotations.end(),
                                   [](const Annotation& a) { return a.timestamp.has_value(); });
  auto out = open_out(path);
  out << "user_id,video_id,t_start,t_end" << (with_ts ? ",timestamp" : "") << '\n';
  for (const auto& a : annotations) {
    out << csv_field(a.user_id) << ',' << csv_field(a.video_id) << ',' << fmt_real(a.t_start) << ','
        << fmt_real(a.t_end);
    if (with_ts) out << ',' << (a.timestamp ? fmt_real(*a.timestamp) : "");
    out << '\n';
  }
}

std::unordered_map<std::string, double> read_video_durations(const std::string& path) {
  const CsvTable t = read_csv(path);
  if (t.header != std::vector<std::string>{"video_id", "duration_seconds"}) {
    throw DataError(path + ":1: header must be video_id,duration_seconds");
  }
  std::unordered_map<std::string, double> out;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const std::size_t line = t.line_numbers[r];
    const double d = parse_real(t.rows[r][1], path, line, "duration_seconds");
    if (d <= 0) throw DataError(path + ":" + std::to_string(line) + ": duration must be positive");
    out[t.rows[r][0]] = d;
  }
  return out;
}

void write_video_durations(const std::vector<std::pair<std::string, double>>& videos,
                           const std::string& path) {
  auto out = open_out(path);
  out << "video_id,duration_seconds\n";
  for (const auto& [k, d] : videos) out << csv_field(k) << ',' << fmt_real(d) << '\n';
}

namespace {

json edges_json(const std::vector<UserSegment>& edges) {
  json a = json::array();
  for (const auto& e : edges) a.push_back({e.user, e.segment});
  return a;
}

std::vector<UserSegment> edges_from(const json& a) {
  std::vector<UserSegment> out;
  for (const auto& e : a) out.push_back({e.at(0).get<std::uint32_t>(), e.at(1).get<std::uint32_t>()});
  return out;
}

}  // namespace

void write_graph_dump(const Corpus& corpus, const Split& split, const std::string& path) {
  json j;
  j["format"] = "transgrec-graph";
  j["version"] = 1;
  j["window"] = corpus.window;
  j["threshold"] = corpus.threshold;
  j["users"] = corpus.users;
  json videos = json::array();
  for (const auto& v : corpus.videos) {
    videos.push_back({{"key", v.key},
                      {"duration", v.duration},
                      {"first_segment", v.first_segment},
                      {"segment_count", v.segment_count}});
  }
  j["videos"] = std::move(videos);
  json segs = json::array();
  for (const auto& s : corpus.segments) {
    segs.push_back({s.segment_id, s.video, s.ordinal, s.start, s.end});
  }
  j["segments"] = std::move(segs);
  j["edges"] = edges_json(corpus.edges);
  json anns = json::array();
  for (const auto& a : corpus.annotations) {
    anns.push_back({{"user", a.user}, {"video", a.video}, {"order", a.order}, {"positives", a.positives}});
  }
  j["annotations"] = std::move(anns);
  json test = json::array();
  for (const auto& t : split.test) {
    test.push_back({{"user", t.user}, {"video", t.video}, {"positives", t.positives}});
  }
  j["split"] = {{"train", edges_json(split.train)},
                {"validation", edges_json(split.validation)},
                {"test", std::move(test)}};
  auto out = open_out(path);
  out << j.dump(1) << '\n';
}

void read_graph_dump(const std::string& path, Corpus& corpus, Split& split) {
  auto in = open_in(path);
  json j;
  try {
    j = json::parse(in);
    if (j.at("format") != "transgrec-graph") throw DataError("not a graph dump");
    corpus = Corpus{};
    corpus.window = j.at("window").get<double>();
    corpus.threshold = j.at("threshold").get<double>();
    corpus.users = j.at("users").get<std::vector<std::string>>();
    for (const auto& v : j.at("videos")) {
      corpus.videos.push_back(Video{v.at("key").get<std::string>(), v.at("duration").get<double>(),
                                    v.at("first_segment").get<std::uint32_t>(),
                                    v.at("segment_count").get<std::uint32_t>()});
    }
    for (const auto& s : j.at("segments")) {
      corpus.segments.push_back(Segment{s.at(0).get<std::uint32_t>(), s.at(1).get<std::uint32_t>(),
                                        s.at(2).get<std::uint32_t>(), s.at(3).get<double>(),
                                        s.at(4).get<double>()});
    }
    corpus.edges = edges_from(j.at("edges"));
    for (const auto& a : j.at("annotations")) {
      corpus.annotations.push_back(ResolvedAnnotation{
          a.at("user").get<std::uint32_t>(), a.at("video").get<std::uint32_t>(),
          a.at("positives").get<std::vector<std::uint32_t>>(), a.at("order").get<double>()});
    }
    split = Split{};
    split.train = edges_from(j.at("split").at("train"));
    split.validation = edges_from(j.at("split").at("validation"));
    for (const auto& t : j.at("split").at("test")) {
      split.test.push_back(TestRecord{t.at("user").get<std::uint32_t>(),
                                      t.at("video").get<std::uint32_t>(),
                                      t.at("positives").get<std::vector<std::uint32_t>>()});
    }
  } catch (const json::exception& e) {
    throw DataError(path + ": malformed graph dump: " + e.what());
  }
}

void write_segment_table(const Corpus& corpus, const std::string& path) {
  auto out = open_out(path);
  out << "segment_key,segment_id,video_id,start,end\n";
  for (const auto& s : corpus.segments) {
    out << csv_field(corpus.segment_key(s.segment_id)) << ',' << s.segment_id << ','
        << csv_field(corpus.videos[s.video].key) << ',' << fmt_real(s.start) << ','
        << fmt_real(s.end) << '\n';
  }
}

void write_split_files(const Corpus& corpus, const Split& split, const std::string& dir) {
  auto write_edges = [&](const std::vector<UserSegment>& edges, const std::string& name) {
    auto out = open_out((std::filesystem::path(dir) / name).string());
    out << "user_id,segment_key\n";
    for (const auto& e : edges) {
      out << csv_field(corpus.users[e.user]) << ',' << csv_field(corpus.segment_key(e.segment)) << '\n';
    }
  };
  write_edges(split.train, "train.csv");
  write_edges(split.validation, "validation.csv");
  auto out = open_out((std::filesystem::path(dir) / "test.csv").string());
  out << "user_id,video_id,segment_key\n";
  for (const auto& t : split.test) {
    for (auto s : t.positives) {
      out << csv_field(corpus.users[t.user]) << ',' << csv_field(corpus.videos[t.video].key) << ','
          << csv_field(corpus.segment_key(s)) << '\n';
    }
  }
}

// ---------------------------------------------------------------------------
// Feature files

void FeatureStore::insert(const std::string& key, std::span<const float> values) {
  if (values.size() != dim_) {
    throw InvalidInput("feature '" + key + "' has length " + std::to_string(values.size()) +
                       ", expected " + std::to_string(dim_));
  }
  for (float v : values) {
    if (!std::isfinite(v)) throw InvalidInput("feature '" + key + "' contains a non-finite value");
  }
  auto it = index_.find(key);
  if (it != index_.end()) {
    std::copy(values.begin(), values.end(), values_.begin() + it->second * dim_);
    return;
  }
  index_.emplace(key, keys_.size());
  keys_.push_back(key);
  values_.insert(values_.end(), values.begin(), values.end());
}

std::span<const float> FeatureStore::at(const std::string& key) const {
  auto it = index_.find(key);
  if (it == index_.end()) throw MissingFeature("missing feature vector for segment '" + key + "'");
  return {values_.data() + it->second * dim_, dim_};
}

namespace {

constexpr char kMagic[4] = {'C', 'R', 'F', 'S'};

template <typename U>
void put_le(std::ostream& out, U v) {
  unsigned char b[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(b), sizeof(U));
}

template <typename U>
U get_le(std::istream& in, const std::string& path) {
  unsigned char b[sizeof(U)];
  if (!in.read(reinterpret_cast<char*>(b), sizeof(U))) throw DataError(path + ": truncated feature file");
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(b[i]) << (8 * i);
  return v;
}

}  // namespace

void write_features_binary(const FeatureStore& store, const std::string& path) {
  auto out = open_out(path, std::ios::binary);
  out.write(kMagic, 4);
  put_le<std::uint32_t>(out, 1);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(store.dim()));
  put_le<std::uint64_t>(out, store.size());
  for (const auto& key : store.keys()) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(key.size()));
    out.write(key.data(), static_cast<std::streamsize>(key.size()));
    for (float f : store.at(key)) {
      std::uint32_t bits;
      std::memcpy(&bits, &f, 4);
      put_le<std::uint32_t>(out, bits);
    }
  }
}

FeatureStore read_features_binary(const std::string& path) {
  auto in = open_in(path, std::ios::in | std::ios::binary);
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw DataError(path + ": bad magic (expected CRFS)");
  }
  const auto version = get_le<std::uint32_t>(in, path);
  if (version != 1) throw DataError(path + ": unsupported feature file version " + std::to_string(version));
  const auto dim = get_le<std::uint32_t>(in, path);
  const auto count = get_le<std::uint64_t>(in, path);
  FeatureStore store(dim);
  std::vector<float> row(dim);
  for (std::uint64_t r = 0; r < count; ++r) {
    const auto len = get_le<std::uint32_t>(in, path);
    std::string key(len, '\0');
    if (!in.read(key.data(), len)) throw DataError(path + ": truncated feature file");
    for (auto& f : row) {
      const auto bits = get_le<std::uint32_t>(in, path);
      std::memcpy(&f, &bits, 4);
    }
    try {
      store.insert(key, row);
    } catch (const InvalidInput& e) {
      throw DataError(path + ": record " + std::to_string(r) + ": " + e.what());
    }
  }
  return store;
}

void write_features_csv(const FeatureStore& store, const std::string& path) {
  auto out = open_out(path);
  out << "segment_key";
  for (std::size_t c = 0; c < store.dim(); ++c) out << ",f_" << (c + 1);
  out << '\n';
  out << std::setprecision(9);
  for (const auto& key : store.keys()) {
    out << csv_field(key);
    for (float f : store.at(key)) out << ',' << f;
    out << '\n';
  }
}

FeatureStore read_features_csv(const std::string& path) {
  const CsvTable t = read_csv(path);
  if (t.header.size() < 2 || t.header[0] != "segment_key") {
    throw DataError(path + ":1: header must be segment_key,f_1,...,f_F");
  }
  FeatureStore store(t.header.size() - 1);
  std::vector<float> row(store.dim());
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      row[c] = static_cast<float>(parse_real(t.rows[r][c + 1], path, t.line_numbers[r], "feature"));
    }
    store.insert(t.rows[r][0], row);
  }
  return store;
}

FeatureStore read_features(const std::string& path) {
  auto in = open_in(path, std::ios::in | std::ios::binary);
  char magic[4] = {};
  in.read(magic, 4);
  if (in.gcount() == 4 && std::memcmp(magic, kMagic, 4) == 0) return read_features_binary(path);
  return read_features_csv(path);
}

}  // namespace transgrec
