#include "painexpr/data.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>

#include "json.hpp"
#include "painexpr/errors.hpp"

namespace painexpr {
namespace {

using nlohmann::json;

constexpr char kSequenceMagic[4] = {'P', 'X', 'L', 'S'};

void put_u32(std::ostream& out, std::uint32_t v) {
  const unsigned char bytes[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                  static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(bytes), 4);
}

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string seq_name(int id) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "seq_%05d", id);
  return buf;
}

double parse_double(const std::string& s, const std::string& where) {
  double v = 0.0;
  const char* b = s.data();
  const char* e = s.data() + s.size();
  while (b < e && *b == ' ') ++b;
  if (e - b == 3 && std::string(b, e) == "nan") return kNullStimulus;
  auto [ptr, ec] = std::from_chars(b, e, v);
  if (ec != std::errc() || ptr != e) throw DataError("malformed number '" + s + "' in " + where);
  return v;
}

}  // namespace

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

void StimuliProfile::validate() const {
  if (ramp < 0) throw ConfigError("stimuli ramp must be non-negative");
  for (const auto& s : segments) {
    if (s.duration < 1) throw ConfigError("stimuli segment durations must be >= 1");
    if (s.level < 0 || s.level > 4) throw ConfigError("stimuli levels must lie in 0..4");
  }
}

std::vector<double> gen_stimuli(const StimuliProfile& profile) {
  profile.validate();
  std::vector<double> track;
  for (const auto& seg : profile.segments) {
    const double level = seg.level;
    if (seg.level == 0) {
      track.insert(track.end(), static_cast<std::size_t>(seg.duration + 2 * profile.ramp), 0.0);
      continue;
    }
    for (int i = 0; i < profile.ramp; ++i) track.push_back(level * i / profile.ramp);
    track.insert(track.end(), static_cast<std::size_t>(seg.duration), level);
    for (int i = 0; i < profile.ramp; ++i) track.push_back(level * (profile.ramp - 1 - i) / profile.ramp);
  }
  return track;
}

StimuliProfile random_stimuli_profile(int frames, Rng& rng) {
  StimuliProfile p;
  p.ramp = 3 + static_cast<int>(rng.below(6));
  int total = 0;
  bool rest = rng.bernoulli(0.5);
  while (total < frames) {
    StimuliSegment seg;
    if (rest) {
      seg.level = 0;
      seg.duration = 10 + static_cast<int>(rng.below(31));
    } else {
      seg.level = 1 + static_cast<int>(rng.below(4));
      seg.duration = 15 + static_cast<int>(rng.below(41));
    }
    total += seg.duration + 2 * p.ramp;
    p.segments.push_back(seg);
    rest = !rest;
  }
  return p;
}

void SubjectProfile::validate() const {
  if (!(decay > 0.0 && decay < 1.0)) throw ConfigError("subject decay must lie in (0, 1)");
  if (latency_frames < 0) throw ConfigError("subject latency must be non-negative");
  if (response_gain.empty()) throw ConfigError("subject response gain must be non-empty");
}

std::vector<double> emotion_offset(double emotion, int dim) {
  std::vector<double> e(static_cast<std::size_t>(dim));
  for (int k = 0; k < dim; ++k) e[static_cast<std::size_t>(k)] = 0.1 * std::sin(emotion * (k + 1));
  return e;
}

LatentSequence oracle_response(std::span<const double> stimuli, const SubjectProfile& subject, const OracleNoise& noise,
                               Rng& rng, double frame_rate) {
  subject.validate();
  const int dim = static_cast<int>(subject.response_gain.size());
  const int frames = static_cast<int>(stimuli.size());
  if (frames < 1) throw ConfigError("oracle needs a non-empty stimulus track");
  const auto e = emotion_offset(subject.emotion, dim);
  std::vector<double> state(static_cast<std::size_t>(dim), 0.0);
  LatentSequence y(frames, dim, frame_rate);
  for (int t = 0; t < frames; ++t) {
    const int src = t - subject.latency_frames;
    const double c = src >= 0 ? std::max(0.0, stimuli[static_cast<std::size_t>(src)]) : 0.0;
    const double drive = (1.0 - subject.decay) * subject.expressiveness * (c / (1.0 + c));
    for (int k = 0; k < dim; ++k) {
      auto& s = state[static_cast<std::size_t>(k)];
      s = subject.decay * s + drive * (subject.response_gain[static_cast<std::size_t>(k)] + e[static_cast<std::size_t>(k)]);
      if (noise.sigma_obs > 0.0) s += noise.sigma_obs * rng.normal();
      const double scale = noise.raw_scale.empty() ? 1.0 : noise.raw_scale[static_cast<std::size_t>(k)];
      y.at(t, k) = s * scale;
    }
  }
  return y;
}

void DatasetManifest::validate() const {
  if (dim < 1 || stack < 1 || !(frame_rate > 0.0)) throw DataError("manifest: invalid dim/stack/frame_rate");
  if (mean.size() != static_cast<std::size_t>(dim) || std.size() != static_cast<std::size_t>(dim))
    throw DataError("manifest: standardization stats must have one entry per dim");
  for (int k = 0; k < dim; ++k)
    if (!(std[static_cast<std::size_t>(k)] > 0.0))
      throw DataError("manifest: zero standard deviation in dim " + std::to_string(k));
  if (extraction_weights.size() != static_cast<std::size_t>(dim))
    throw DataError("manifest: extraction weights must have one entry per dim");
  for (int k : jaw_dims)
    if (k < 0 || k >= dim) throw DataError("manifest: jaw dim out of range");
}

bool DatasetManifest::is_jaw(int k) const { return std::find(jaw_dims.begin(), jaw_dims.end(), k) != jaw_dims.end(); }

std::vector<const SequenceRecord*> Dataset::split(bool validation) const {
  const auto& ids = validation ? manifest.val_subjects : manifest.train_subjects;
  std::vector<const SequenceRecord*> out;
  for (const auto& s : sequences)
    if (std::find(ids.begin(), ids.end(), s.subject) != ids.end()) out.push_back(&s);
  return out;
}

void DataGenConfig::validate() const {
  if (dim < 1 || stack < 1 || !(frame_rate > 0.0)) throw ConfigError("datagen: invalid dim/stack/frame_rate");
  if (train_subjects < 1 || val_subjects < 0) throw ConfigError("datagen: need at least one training subject");
  if (train_sequences_per_subject < 1 || val_sequences_per_subject < 0) throw ConfigError("datagen: bad sequence counts");
  if (train_frames < 1 || val_frames < 1) throw ConfigError("datagen: sequence lengths must be positive");
  if (jaw_dims < 0 || jaw_dims >= dim) throw ConfigError("datagen: jaw dims must leave at least one expression dim");
  if (!(jaw_scale > 0.0)) throw ConfigError("datagen: jaw scale must be positive");
  if (sigma_obs < 0.0) throw ConfigError("datagen: sigma_obs must be non-negative");
}

std::string DataGenConfig::to_json() const {
  json j{{"dim", dim},
         {"frame_rate", frame_rate},
         {"stack", stack},
         {"train_subjects", train_subjects},
         {"val_subjects", val_subjects},
         {"train_sequences_per_subject", train_sequences_per_subject},
         {"val_sequences_per_subject", val_sequences_per_subject},
         {"train_frames", train_frames},
         {"val_frames", val_frames},
         {"sigma_obs", sigma_obs},
         {"jaw_scale", jaw_scale},
         {"jaw_dims", jaw_dims},
         {"seed", seed}};
  return j.dump();
}

Dataset generate_dataset(const DataGenConfig& cfg) {
  cfg.validate();
  Dataset ds;
  DatasetManifest& m = ds.manifest;
  m.dim = cfg.dim;
  m.frame_rate = cfg.frame_rate;
  m.stack = cfg.stack;
  m.subject_count = cfg.train_subjects + cfg.val_subjects;
  m.jaw_scale = cfg.jaw_scale;
  for (int k = cfg.dim - cfg.jaw_dims; k < cfg.dim; ++k) m.jaw_dims.push_back(k);
  m.config_json = cfg.to_json();

  Rng base(cfg.seed, 0);
  // Shared response direction; extraction projects onto it in raw units.
  Rng dir_rng = base.split(1);
  std::vector<double> direction(static_cast<std::size_t>(cfg.dim));
  for (auto& v : direction) v = 0.3 + std::abs(dir_rng.normal());
  double norm = 0.0;
  for (double v : direction) norm += v * v;
  norm = std::sqrt(norm);
  for (auto& v : direction) v /= norm;
  std::vector<double> raw_scale(static_cast<std::size_t>(cfg.dim), 1.0);
  for (int k : m.jaw_dims) raw_scale[static_cast<std::size_t>(k)] = 1.0 / cfg.jaw_scale;
  m.extraction_weights.resize(static_cast<std::size_t>(cfg.dim));
  for (int k = 0; k < cfg.dim; ++k)
    m.extraction_weights[static_cast<std::size_t>(k)] = direction[static_cast<std::size_t>(k)] / raw_scale[static_cast<std::size_t>(k)];

  // Roughly one low-expressive subject per four normal ones in each split.
  auto low_count = [](int n) { return n / 5; };
  int next_seq = 0;
  for (int sid = 0; sid < m.subject_count; ++sid) {
    const bool validation = sid >= cfg.train_subjects;
    const int local = validation ? sid - cfg.train_subjects : sid;
    const int split_size = validation ? cfg.val_subjects : cfg.train_subjects;
    (validation ? m.val_subjects : m.train_subjects).push_back(sid);

    Rng srng = base.split(100 + static_cast<std::uint64_t>(sid));
    SubjectProfile subj;
    subj.id = sid;
    subj.low_expressive = local < low_count(split_size);
    subj.expressiveness = subj.low_expressive ? 0.2 + 0.25 * srng.uniform() : 0.8 + 0.5 * srng.uniform();
    subj.emotion = -1.0 + 2.0 * srng.uniform();
    subj.latency_frames = 2 + static_cast<int>(srng.below(7));
    subj.decay = 0.85 + 0.1 * srng.uniform();
    subj.response_gain.resize(static_cast<std::size_t>(cfg.dim));
    for (int k = 0; k < cfg.dim; ++k)
      subj.response_gain[static_cast<std::size_t>(k)] = 2.0 * direction[static_cast<std::size_t>(k)] + 0.2 * srng.normal();
    ds.subjects.push_back({sid, subj.expressiveness, subj.emotion});

    OracleNoise noise{cfg.sigma_obs, raw_scale};
    const int count = validation ? cfg.val_sequences_per_subject : cfg.train_sequences_per_subject;
    const int frames = validation ? cfg.val_frames : cfg.train_frames;
    for (int q = 0; q < count; ++q) {
      Rng qrng = srng.split(1000 + static_cast<std::uint64_t>(q));
      auto stimuli = gen_stimuli(random_stimuli_profile(frames, qrng));
      stimuli.resize(static_cast<std::size_t>(frames));
      auto latents = oracle_response(stimuli, subj, noise, qrng, cfg.frame_rate);
      // Stored as float32 on disk; round here so memory and disk agree.
      for (auto& v : latents.data()) v = static_cast<double>(static_cast<float>(v));
      SequenceRecord rec;
      rec.id = next_seq++;
      rec.subject = sid;
      rec.expressiveness = subj.expressiveness;
      rec.emotion = subj.emotion;
      rec.stimuli = std::move(stimuli);
      rec.latents = std::move(latents);
      ds.sequences.push_back(std::move(rec));
    }
  }
  const auto train = ds.split(false);
  compute_standardization(m, train);
  m.validate();
  return ds;
}

void compute_standardization(DatasetManifest& m, std::span<const SequenceRecord* const> train) {
  const int dim = m.dim;
  std::vector<double> sum(static_cast<std::size_t>(dim), 0.0), sq(static_cast<std::size_t>(dim), 0.0);
  double count = 0.0;
  for (const auto* rec : train) {
    for (int t = 0; t < rec->latents.frames(); ++t)
      for (int k = 0; k < dim; ++k) {
        const double v = rec->latents.at(t, k) * (m.is_jaw(k) ? m.jaw_scale : 1.0);
        sum[static_cast<std::size_t>(k)] += v;
      }
    count += rec->latents.frames();
  }
  if (count == 0.0) throw DataError("standardization needs at least one training frame");
  m.mean.assign(static_cast<std::size_t>(dim), 0.0);
  for (int k = 0; k < dim; ++k) m.mean[static_cast<std::size_t>(k)] = sum[static_cast<std::size_t>(k)] / count;
  for (const auto* rec : train)
    for (int t = 0; t < rec->latents.frames(); ++t)
      for (int k = 0; k < dim; ++k) {
        const double v = rec->latents.at(t, k) * (m.is_jaw(k) ? m.jaw_scale : 1.0) - m.mean[static_cast<std::size_t>(k)];
        sq[static_cast<std::size_t>(k)] += v * v;
      }
  m.std.assign(static_cast<std::size_t>(dim), 0.0);
  for (int k = 0; k < dim; ++k) {
    m.std[static_cast<std::size_t>(k)] = std::sqrt(sq[static_cast<std::size_t>(k)] / count);
    if (!(m.std[static_cast<std::size_t>(k)] > 0.0))
      throw DataError("standardization: zero standard deviation in dim " + std::to_string(k));
  }
}

LatentSequence standardize(const LatentSequence& x, const DatasetManifest& m) {
  if (x.dim() != m.dim) throw DataError("standardize: latent dim does not match manifest");
  LatentSequence out = x;
  for (int k = 0; k < m.dim; ++k) {
    const double sd = m.std[static_cast<std::size_t>(k)];
    if (!(sd > 0.0)) throw DataError("standardize: zero standard deviation in dim " + std::to_string(k));
    const double js = m.is_jaw(k) ? m.jaw_scale : 1.0;
    for (int t = 0; t < x.frames(); ++t) out.at(t, k) = (x.at(t, k) * js - m.mean[static_cast<std::size_t>(k)]) / sd;
  }
  return out;
}

LatentSequence destandardize(const LatentSequence& x, const DatasetManifest& m) {
  if (x.dim() != m.dim) throw DataError("destandardize: latent dim does not match manifest");
  LatentSequence out = x;
  for (int k = 0; k < m.dim; ++k) {
    const double sd = m.std[static_cast<std::size_t>(k)];
    if (!(sd > 0.0)) throw DataError("destandardize: zero standard deviation in dim " + std::to_string(k));
    const double js = m.is_jaw(k) ? m.jaw_scale : 1.0;
    for (int t = 0; t < x.frames(); ++t) out.at(t, k) = (x.at(t, k) * sd + m.mean[static_cast<std::size_t>(k)]) / js;
  }
  return out;
}

TrainingWindow sample_training_window(std::span<const SequenceRecord> sequences, int frames, Rng& rng,
                                      double trim_prob) {
  if (sequences.empty()) throw DataError("no training sequences");
  if (frames < 1) throw ConfigError("training window must hold at least one frame");
  std::uint64_t total = 0;
  for (const auto& s : sequences)
    if (s.latents.frames() >= frames) total += static_cast<std::uint64_t>(s.latents.frames() - frames + 1);
  if (total == 0) throw DataError("all training sequences are shorter than the window (" + std::to_string(frames) + ")");
  std::uint64_t pick = rng.below(total);
  std::size_t si = 0;
  for (;; ++si) {
    const auto& s = sequences[si];
    if (s.latents.frames() < frames) continue;
    const auto n = static_cast<std::uint64_t>(s.latents.frames() - frames + 1);
    if (pick < n) break;
    pick -= n;
  }
  const auto& seq = sequences[si];
  TrainingWindow w;
  w.sequence = seq.id;
  w.start = static_cast<int>(pick);
  w.latents = seq.latents.slice(w.start, frames);
  w.bundle = seq.bundle().window(w.start, frames);
  if (rng.bernoulli(trim_prob)) {
    w.trimmed = static_cast<int>(rng.below(static_cast<std::uint64_t>(frames)));
    for (int i = 0; i < w.trimmed; ++i) w.bundle.stimuli[static_cast<std::size_t>(i)] = kNullStimulus;
  }
  return w;
}

void write_sequence_file(const std::filesystem::path& path, const LatentSequence& x) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(kSequenceMagic, 4);
  put_u32(out, kSequenceFormatVersion);
  put_u32(out, static_cast<std::uint32_t>(x.frames()));
  put_u32(out, static_cast<std::uint32_t>(x.dim()));
  std::vector<unsigned char> buf(x.data().size() * 4);
  for (std::size_t i = 0; i < x.data().size(); ++i) {
    const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(x.data()[i]));
    for (int b = 0; b < 4; ++b) buf[i * 4 + b] = static_cast<unsigned char>(bits >> (8 * b));
  }
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!out) throw DataError("failed writing " + path.string());
}

LatentSequence read_sequence_file(const std::filesystem::path& path, int sequence_id, double frame_rate) {
  const std::string who = "sequence " + std::to_string(sequence_id) + " (" + path.filename().string() + ")";
  const std::string bytes = read_file(path);
  if (bytes.size() < 16) throw DataError(who + ": truncated record header");
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (std::memcmp(p, kSequenceMagic, 4) != 0) throw DataError(who + ": bad magic");
  const std::uint32_t version = get_u32(p + 4);
  if (version != kSequenceFormatVersion)
    throw DataError(who + ": version mismatch (file " + std::to_string(version) + ", expected " +
                    std::to_string(kSequenceFormatVersion) + ")");
  const std::uint32_t frames = get_u32(p + 8);
  const std::uint32_t dim = get_u32(p + 12);
  const std::size_t count = static_cast<std::size_t>(frames) * dim;
  if (bytes.size() < 16 + count * 4) throw DataError(who + ": truncated record");
  if (bytes.size() > 16 + count * 4) throw DataError(who + ": trailing bytes after record");
  std::vector<double> data(count);
  for (std::size_t i = 0; i < count; ++i) data[i] = std::bit_cast<float>(get_u32(p + 16 + i * 4));
  return LatentSequence(static_cast<int>(frames), static_cast<int>(dim), std::move(data), frame_rate);
}

void write_stimuli_csv(const std::filesystem::path& path, std::span<const double> stimuli) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << "frame,stimulus\n";
  for (std::size_t i = 0; i < stimuli.size(); ++i) out << i << ',' << format_double(stimuli[i]) << '\n';
}

std::vector<double> read_stimuli_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "frame,stimulus")
    throw DataError(path.string() + ": expected header 'frame,stimulus'");
  std::vector<double> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw DataError(path.string() + ": malformed row '" + line + "'");
    const auto frame = static_cast<std::size_t>(parse_double(line.substr(0, comma), path.string()));
    if (frame != out.size()) throw DataError(path.string() + ": frames must be consecutive from 0");
    out.push_back(parse_double(line.substr(comma + 1), path.string()));
  }
  return out;
}

std::string manifest_to_json(const DatasetManifest& m) {
  json j{{"version", m.version},
         {"dim", m.dim},
         {"frame_rate", m.frame_rate},
         {"stack", m.stack},
         {"subject_count", m.subject_count},
         {"train_subjects", m.train_subjects},
         {"val_subjects", m.val_subjects},
         {"mean", m.mean},
         {"std", m.std},
         {"jaw_scale", m.jaw_scale},
         {"jaw_dims", m.jaw_dims},
         {"extraction_weights", m.extraction_weights},
         {"config", json::parse(m.config_json)}};
  return j.dump(2);
}

DatasetManifest manifest_from_json(const std::string& text) {
  DatasetManifest m;
  try {
    const json j = json::parse(text);
    m.version = j.at("version").get<std::uint32_t>();
    if (m.version != kManifestFormatVersion)
      throw DataError("manifest version mismatch (file " + std::to_string(m.version) + ", expected " +
                      std::to_string(kManifestFormatVersion) + ")");
    m.dim = j.at("dim").get<int>();
    m.frame_rate = j.at("frame_rate").get<double>();
    m.stack = j.at("stack").get<int>();
    m.subject_count = j.at("subject_count").get<int>();
    m.train_subjects = j.at("train_subjects").get<std::vector<int>>();
    m.val_subjects = j.at("val_subjects").get<std::vector<int>>();
    m.mean = j.at("mean").get<std::vector<double>>();
    m.std = j.at("std").get<std::vector<double>>();
    m.jaw_scale = j.at("jaw_scale").get<double>();
    m.jaw_dims = j.at("jaw_dims").get<std::vector<int>>();
    m.extraction_weights = j.at("extraction_weights").get<std::vector<double>>();
    m.config_json = j.contains("config") ? j.at("config").dump() : "{}";
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed manifest: ") + e.what());
  }
  m.validate();
  return m;
}

std::uint64_t manifest_hash(const DatasetManifest& m) {
  // FNV-1a over the canonical JSON text.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : manifest_to_json(m)) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  json seqs = json::array();
  for (const auto& rec : ds.sequences) {
    const std::string base = seq_name(rec.id);
    write_sequence_file(dir / (base + ".bin"), rec.latents);
    write_stimuli_csv(dir / (base + "_stimuli.csv"), rec.stimuli);
    seqs.push_back({{"id", rec.id},
                    {"subject", rec.subject},
                    {"frames", rec.latents.frames()},
                    {"latents", base + ".bin"},
                    {"stimuli", base + "_stimuli.csv"}});
  }
  json j = json::parse(manifest_to_json(ds.manifest));
  j["sequences"] = seqs;
  {
    std::ofstream out(dir / "manifest.json", std::ios::trunc);
    if (!out) throw DataError("cannot write manifest in " + dir.string());
    out << j.dump(2) << '\n';
  }
  std::ofstream cfg(dir / "subjects.csv", std::ios::trunc);
  if (!cfg) throw DataError("cannot write subjects.csv in " + dir.string());
  cfg << "subject,expressiveness,emotion\n";
  for (const auto& s : ds.subjects)
    cfg << s.id << ',' << format_double(s.expressiveness) << ',' << format_double(s.emotion) << '\n';
}

Dataset load_dataset(const std::filesystem::path& dir) {
  Dataset ds;
  const std::string text = read_file(dir / "manifest.json");
  ds.manifest = manifest_from_json(text);
  json seqs;
  try {
    seqs = json::parse(text).at("sequences");
  } catch (const json::exception& e) {
    throw DataError(std::string("manifest lacks a sequence list: ") + e.what());
  }

  {
    std::ifstream in(dir / "subjects.csv");
    if (!in) throw DataError("cannot open subjects.csv in " + dir.string());
    std::string line;
    if (!std::getline(in, line) || line != "subject,expressiveness,emotion")
      throw DataError("subjects.csv: expected header 'subject,expressiveness,emotion'");
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::stringstream ss(line);
      std::string a, b, c;
      if (!std::getline(ss, a, ',') || !std::getline(ss, b, ',') || !std::getline(ss, c))
        throw DataError("subjects.csv: malformed row '" + line + "'");
      ds.subjects.push_back({static_cast<int>(parse_double(a, "subjects.csv")), parse_double(b, "subjects.csv"),
                             parse_double(c, "subjects.csv")});
    }
  }

  for (const auto& s : seqs) {
    SequenceRecord rec;
    try {
      rec.id = s.at("id").get<int>();
      rec.subject = s.at("subject").get<int>();
    } catch (const json::exception& e) {
      throw DataError(std::string("malformed sequence entry: ") + e.what());
    }
    const auto subj = std::find_if(ds.subjects.begin(), ds.subjects.end(), [&](const SubjectInfo& x) { return x.id == rec.subject; });
    if (subj == ds.subjects.end())
      throw DataError("sequence " + std::to_string(rec.id) + ": subject " + std::to_string(rec.subject) + " not in subjects.csv");
    rec.expressiveness = subj->expressiveness;
    rec.emotion = subj->emotion;
    rec.latents = read_sequence_file(dir / s.at("latents").get<std::string>(), rec.id, ds.manifest.frame_rate);
    const int frames = s.at("frames").get<int>();
    if (rec.latents.dim() != ds.manifest.dim || rec.latents.frames() != frames) {
      throw DataError("sequence " + std::to_string(rec.id) + ": record shape " + std::to_string(rec.latents.frames()) +
                      "x" + std::to_string(rec.latents.dim()) + " disagrees with manifest " + std::to_string(frames) +
                      "x" + std::to_string(ds.manifest.dim));
    }
    rec.stimuli = read_stimuli_csv(dir / s.at("stimuli").get<std::string>());
    if (rec.stimuli.size() != static_cast<std::size_t>(frames))
      throw DataError("sequence " + std::to_string(rec.id) + ": stimuli length disagrees with manifest");
    ds.sequences.push_back(std::move(rec));
  }
  return ds;
}

}  // namespace painexpr
