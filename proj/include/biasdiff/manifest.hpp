#pragma once

// Experiment manifest: synthetic data generation settings, the train/test
// split, network and training settings, evaluation settings, and the list
// of sequences written by `synth`. Stored as indented JSON.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "biasdiff/dataset.hpp"
#include "biasdiff/imu_model.hpp"
#include "biasdiff/networks.hpp"

namespace biasdiff {

struct SplitConfig {
  int sequences = 0;
  double duration_s = 0.0;
};

struct TrainingConfig {
  int epochs = 100;
  int batch_size = 32;
  double lr = 3e-5;
};

struct EvaluationConfig {
  int runs = 50;
  int ddim_steps = 25;
  int oracle_candidates = 50;
  std::vector<std::string> methods{"diffusion", "regression", "random-walk-oracle", "zero-bias"};
};

struct SequenceEntry {
  std::string name;
  std::string split;  // train | test
  int id = 0;         // index within its split; becomes Window::sequence_id
  std::string path;   // EuRoC-layout directory, relative to the manifest
};

struct Manifest {
  std::uint64_t seed = 1;
  double rate_hz = 100.0;
  double window_s = 1.0;
  double overlap = 0.5;
  SplitConfig train;
  SplitConfig test;
  MotionConfig motion;
  BiasProcessConfig bias;
  NoiseParams noise;
  NetworkConfig network;
  TrainingConfig training;
  EvaluationConfig evaluation;
  std::vector<SequenceEntry> sequences;

  // Throws ConfigError on inconsistent settings.
  void validate() const;
  // Window length in samples.
  int window_samples() const;
};

// Desk-scale experiment: level stop-and-go motion at 100 Hz, with 1 s
// windows at 50% overlap and a small network.
Manifest desk_manifest();

std::string manifest_to_json(const Manifest& m);
// Throws ConfigError on malformed or incomplete input.
Manifest manifest_from_json(const std::string& text);
void save_manifest(const std::filesystem::path& path, const Manifest& m);
Manifest load_manifest(const std::filesystem::path& path);

// Sequence `index` of a split, synthesized from the manifest seed.
Sequence synthesize_split(const Manifest& m, const std::string& split, int index);

// Windows of every listed sequence in a split, read from disk relative to
// `root` when the manifest lists written sequences, otherwise synthesized
// in memory. Sequence ids follow SequenceEntry::id.
std::vector<Window> split_windows(const Manifest& m, const std::string& split, const std::filesystem::path& root,
                                  std::vector<std::string>* names = nullptr);

}  // namespace biasdiff
