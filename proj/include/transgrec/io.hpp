#pragma once

#include <istream>
#include <string>
#include <unordered_map>
#include <vector>

#include "transgrec/dataset.hpp"

namespace transgrec {

/// RFC 4180 style row splitting: quoted fields, doubled quotes, CRLF tolerant.
std::vector<std::string> split_csv_line(const std::string& line);

/// Reads all rows after the header. Throws DataError naming the line on malformed rows.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> line_numbers;
};
CsvTable read_csv(const std::string& path);

/// header: user_id,video_id,t_start,t_end[,timestamp]
std::vector<Annotation> read_annotations(const std::string& path);
void write_annotations(const std::vector<Annotation>& annotations, const std::string& path);

/// header: video_id,duration_seconds
std::unordered_map<std::string, double> read_video_durations(const std::string& path);
void write_video_durations(const std::vector<std::pair<std::string, double>>& videos,
                           const std::string& path);

/// JSON audit dump: parameters, index maps, segment table, edges, and split membership.
void write_graph_dump(const Corpus& corpus, const Split& split, const std::string& path);
void read_graph_dump(const std::string& path, Corpus& corpus, Split& split);

/// segment_key,segment_id,video_id,start,end
void write_segment_table(const Corpus& corpus, const std::string& path);
/// user_id,segment_key per edge; test file adds the video column.
void write_split_files(const Corpus& corpus, const Split& split, const std::string& dir);

}  // namespace transgrec
