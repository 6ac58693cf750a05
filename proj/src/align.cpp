#include "mag/align.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

#include "mag/data.hpp"
#include "mag/errors.hpp"

namespace mag {

using ordered_json = nlohmann::ordered_json;

namespace {

void validate_spans(const std::vector<WordSpan>& spans) {
  for (std::size_t i = 0; i < spans.size(); ++i) {
    if (!(spans[i].start >= 0.0 && spans[i].start < spans[i].end)) {
      throw ContractError("span " + std::to_string(i) + " must satisfy 0 <= start < end");
    }
    if (i > 0 && spans[i].start < spans[i - 1].end) {
      throw ContractError("spans must be sorted and non-overlapping (span " + std::to_string(i) +
                          " starts before span " + std::to_string(i - 1) + " ends)");
    }
  }
}

void validate_track(const FrameTrack& track) {
  if (track.timestamps.size() != track.features.size()) {
    throw ContractError("track has " + std::to_string(track.timestamps.size()) +
                        " timestamps for " + std::to_string(track.features.size()) +
                        " feature rows");
  }
  for (std::size_t i = 1; i < track.timestamps.size(); ++i) {
    if (track.timestamps[i] < track.timestamps[i - 1]) {
      throw ContractError("track timestamps decrease at frame " + std::to_string(i));
    }
  }
  for (std::size_t i = 1; i < track.features.size(); ++i) {
    if (track.features[i].size() != track.features[0].size()) {
      throw ContractError("track feature rows are ragged at frame " + std::to_string(i));
    }
  }
}

}  // namespace

AlignResult align_average(const std::vector<WordSpan>& spans, const FrameTrack& track) {
  validate_spans(spans);
  validate_track(track);
  const std::size_t d = track.features.empty() ? 0 : track.features[0].size();

  AlignResult result;
  result.rows.assign(spans.size(), std::vector<double>(d, 0.0));

  std::size_t frame = 0;
  for (std::size_t w = 0; w < spans.size(); ++w) {
    while (frame < track.timestamps.size() && track.timestamps[frame] < spans[w].start) ++frame;
    std::size_t count = 0;
    std::size_t f = frame;
    for (; f < track.timestamps.size() && track.timestamps[f] < spans[w].end; ++f) {
      for (std::size_t k = 0; k < d; ++k) result.rows[w][k] += track.features[f][k];
      ++count;
    }
    frame = f;  // spans are sorted, no frame belongs to two spans
    if (count == 0) {
      result.empty_rows.push_back(w);
    } else {
      const double inv = 1.0 / static_cast<double>(count);
      for (std::size_t k = 0; k < d; ++k) result.rows[w][k] *= inv;
    }
  }
  return result;
}

namespace {

FrameTrack track_from_json(const ordered_json& j, std::size_t line_no, const char* field) {
  FrameTrack track;
  try {
    for (const auto& t : j.at("timestamps")) track.timestamps.push_back(t.get<double>());
    for (const auto& row : j.at("features"))
      track.features.push_back(row.get<std::vector<double>>());
  } catch (const std::exception& e) {
    throw ParseError("line " + std::to_string(line_no) + ": field '" + field + "': " + e.what());
  }
  return track;
}

}  // namespace

AlignFileSummary align_file(const std::string& input_path, const std::string& output_path) {
  std::ifstream is(input_path);
  if (!is) throw IoError("cannot open '" + input_path + "'");

  AlignFileSummary summary;
  std::vector<MultimodalExample> examples;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    ordered_json j;
    try {
      j = ordered_json::parse(line);
    } catch (const std::exception& e) {
      throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
    }

    MultimodalExample ex;
    std::vector<WordSpan> spans;
    try {
      for (const auto& t : j.at("tokens")) ex.tokens.push_back(t.get<std::size_t>());
      for (const auto& s : j.at("spans"))
        spans.push_back({s.at(0).get<double>(), s.at(1).get<double>()});
      ex.label = j.at("label").get<double>();
    } catch (const std::exception& e) {
      throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
    }
    if (spans.size() != ex.tokens.size()) {
      throw ParseError("line " + std::to_string(line_no) + ": " +
                       std::to_string(spans.size()) + " spans for " +
                       std::to_string(ex.tokens.size()) + " tokens");
    }

    const FrameTrack acoustic = track_from_json(j.at("acoustic"), line_no, "acoustic");
    const FrameTrack visual = track_from_json(j.at("visual"), line_no, "visual");

    AlignResult a;
    AlignResult v;
    try {
      a = align_average(spans, acoustic);
      v = align_average(spans, visual);
    } catch (const ContractError& e) {
      throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
    }
    for (std::size_t w : a.empty_rows) {
      summary.notes.push_back("line " + std::to_string(line_no) + ": word " + std::to_string(w) +
                              " has no acoustic frames");
    }
    for (std::size_t w : v.empty_rows) {
      summary.notes.push_back("line " + std::to_string(line_no) + ": word " + std::to_string(w) +
                              " has no visual frames");
    }
    summary.empty_acoustic_rows += a.empty_rows.size();
    summary.empty_visual_rows += v.empty_rows.size();

    ex.acoustic = std::move(a.rows);
    ex.visual = std::move(v.rows);
    validate_example(ex, line_no);
    examples.push_back(std::move(ex));
    ++summary.utterances;
  }

  save_dataset(output_path, examples);
  return summary;
}

}  // namespace mag
