#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace mag {

/// Time span of one word in seconds; spans are sorted and non-overlapping.
struct WordSpan {
  double start = 0.0;
  double end = 0.0;
};

/// Frame-level feature track: one feature row per timestamp. Timestamps are
/// non-decreasing (ties mark frames sampled at the same instant).
struct FrameTrack {
  std::vector<double> timestamps;
  std::vector<std::vector<double>> features;
};

struct AlignResult {
  std::vector<std::vector<double>> rows;    // one averaged row per span
  std::vector<std::size_t> empty_rows;      // spans covering no frame (zero rows)
};

/// Averages the feature rows of frames falling in each word span; membership
/// is half-open [start, end) on the frame timestamp. Spans covering no frame
/// yield zero rows and are reported in empty_rows.
AlignResult align_average(const std::vector<WordSpan>& spans, const FrameTrack& track);

struct AlignFileSummary {
  std::size_t utterances = 0;
  std::size_t empty_acoustic_rows = 0;
  std::size_t empty_visual_rows = 0;
  std::vector<std::string> notes;  // one per empty-coverage word
};

/// Converts raw per-utterance track files (JSONL with `tokens`, `label`,
/// `spans`, `acoustic`/`visual` tracks) into the per-word dataset format.
AlignFileSummary align_file(const std::string& input_path, const std::string& output_path);

}  // namespace mag
