#include "neufa/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

namespace neufa {

using nlohmann::json;

namespace {

constexpr int kCorpusVersion = 1;

std::string fmt_seconds(double ms) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", ms / 1000.0);
  return buf;
}

}  // namespace

void Utterance::validate() const {
  if (tokens.empty()) throw InputError(id + ": utterance has no tokens");
  if (!frames.defined() || frames.ndim() != 2 || frames.dim(0) == 0 || frames.dim(1) == 0)
    throw InputError(id + ": frames must be a non-empty [n_frames x d_mel] matrix");
  if (!(frame_shift_ms > 0.0)) throw InputError(id + ": frame shift must be positive");
  if (gt.units.size() != tokens.size())
    throw InputError(id + ": " + std::to_string(gt.units.size()) + " boundaries for " +
                     std::to_string(tokens.size()) + " tokens");
  for (int t : tokens)
    if (t < 0) throw InputError(id + ": negative token id");
  const double end = static_cast<double>(n_frames()) * frame_shift_ms;
  double prev = 0.0;
  for (std::size_t i = 0; i < gt.units.size(); ++i) {
    const auto& u = gt.units[i];
    if (u.left_ms < prev || u.right_ms < u.left_ms || u.right_ms > end)
      throw InputError(id + ": boundary " + std::to_string(i) + " out of order or outside [0, " +
                       std::to_string(end) + "] ms");
    prev = u.right_ms;
  }
}

bool same_utterance(const Utterance& a, const Utterance& b) {
  if (a.id != b.id || a.tokens != b.tokens || !(a.gt == b.gt) || a.frame_shift_ms != b.frame_shift_ms) return false;
  if (a.frames.shape() != b.frames.shape()) return false;
  return std::equal(a.frames.data().begin(), a.frames.data().end(), b.frames.data().begin());
}

// ---------------------------------------------------------------------------
// synthetic corpora

void SyntheticSpec::validate() const {
  if (vocab_size == 0 || d_mel == 0) throw ConfigError("synthetic spec: vocab_size and d_mel must be >= 1");
  if (min_duration == 0 || max_duration < min_duration) throw ConfigError("synthetic spec: bad duration range");
  if (min_tokens == 0 || max_tokens < min_tokens) throw ConfigError("synthetic spec: bad token range");
  if (!(noise >= 0.0)) throw ConfigError("synthetic spec: noise must be >= 0");
  if (!(frame_shift_ms > 0.0)) throw ConfigError("synthetic spec: frame shift must be positive");
}

void to_json(json& j, const SyntheticSpec& s) {
  j = json{{"vocab_size", s.vocab_size}, {"d_mel", s.d_mel},         {"min_duration", s.min_duration},
           {"max_duration", s.max_duration}, {"noise", s.noise},     {"min_tokens", s.min_tokens},
           {"max_tokens", s.max_tokens}, {"size", s.size},           {"seed", s.seed},
           {"frame_shift_ms", s.frame_shift_ms}, {"silence", s.silence}, {"max_silence", s.max_silence}};
}

void from_json(const json& j, SyntheticSpec& s) {
  const SyntheticSpec d;
  s.vocab_size = j.value("vocab_size", d.vocab_size);
  s.d_mel = j.value("d_mel", d.d_mel);
  s.min_duration = j.value("min_duration", d.min_duration);
  s.max_duration = j.value("max_duration", d.max_duration);
  s.noise = j.value("noise", d.noise);
  s.min_tokens = j.value("min_tokens", d.min_tokens);
  s.max_tokens = j.value("max_tokens", d.max_tokens);
  s.size = j.value("size", d.size);
  s.seed = j.value("seed", d.seed);
  s.frame_shift_ms = j.value("frame_shift_ms", d.frame_shift_ms);
  s.silence = j.value("silence", d.silence);
  s.max_silence = j.value("max_silence", d.max_silence);
}

Corpus generate_synthetic_corpus(const SyntheticSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);

  std::vector<std::vector<double>> proto(spec.vocab_size, std::vector<double>(spec.d_mel));
  for (auto& p : proto)
    for (auto& v : p) v = gauss(rng);

  std::uniform_int_distribution<std::size_t> n_tok(spec.min_tokens, spec.max_tokens);
  std::uniform_int_distribution<int> tok(0, static_cast<int>(spec.vocab_size) - 1);
  std::uniform_int_distribution<std::size_t> dur(spec.min_duration, spec.max_duration);
  std::uniform_int_distribution<std::size_t> gap(0, spec.max_silence);

  Corpus corpus;
  corpus.reserve(spec.size);
  for (std::size_t u = 0; u < spec.size; ++u) {
    Utterance utt;
    char id[32];
    std::snprintf(id, sizeof id, "utt%05zu", u);
    utt.id = id;
    utt.frame_shift_ms = spec.frame_shift_ms;
    utt.gt.frame_shift_ms = spec.frame_shift_ms;

    std::vector<double> values;
    std::size_t frame = 0;
    auto emit = [&](const std::vector<double>* p, std::size_t count) {
      for (std::size_t f = 0; f < count; ++f, ++frame)
        for (std::size_t k = 0; k < spec.d_mel; ++k)
          values.push_back((p ? (*p)[k] : 0.0) + spec.noise * gauss(rng));
    };
    const std::size_t n = n_tok(rng);
    for (std::size_t i = 0; i < n; ++i) {
      if (spec.silence && i > 0) emit(nullptr, gap(rng));
      const int t = tok(rng);
      const std::size_t d = dur(rng);
      const double left = static_cast<double>(frame) * spec.frame_shift_ms;
      emit(&proto[static_cast<std::size_t>(t)], d);
      utt.tokens.push_back(t);
      utt.gt.units.push_back({left, static_cast<double>(frame) * spec.frame_shift_ms});
    }
    utt.frames = Tensor::from({frame, spec.d_mel}, std::move(values));
    corpus.push_back(std::move(utt));
  }
  return corpus;
}

// ---------------------------------------------------------------------------
// corpus codec

void save_corpus(const Corpus& corpus, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  for (const auto& u : corpus) {
    json bounds = json::array();
    for (const auto& b : u.gt.units) bounds.push_back({b.left_ms, b.right_ms});
    json rec = {{"v", kCorpusVersion},
                {"id", u.id},
                {"tokens", u.tokens},
                {"n_frames", u.n_frames()},
                {"d_mel", u.d_mel()},
                {"frames", std::vector<double>(u.frames.data().begin(), u.frames.data().end())},
                {"boundaries", bounds},
                {"frame_shift_ms", u.frame_shift_ms}};
    out << rec.dump() << '\n';
  }
  if (!out) throw IoError("failed writing " + path);
}

Corpus load_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open corpus " + path);
  Corpus corpus;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::exception& e) {
      throw ParseError(std::string("malformed corpus record: ") + e.what(), lineno);
    }
    if (!rec.is_object() || !rec.contains("v")) throw ParseError("record has no version tag", lineno);
    if (rec.at("v") != kCorpusVersion)
      throw FormatError(path + ": line " + std::to_string(lineno) + ": unsupported corpus version " +
                        rec.at("v").dump());
    try {
      Utterance u;
      u.id = rec.at("id").get<std::string>();
      u.tokens = rec.at("tokens").get<std::vector<int>>();
      const auto nf = rec.at("n_frames").get<std::size_t>();
      const auto dm = rec.at("d_mel").get<std::size_t>();
      auto values = rec.at("frames").get<std::vector<double>>();
      if (values.size() != nf * dm) throw ParseError("frame count disagrees with n_frames x d_mel", lineno);
      u.frames = Tensor::from({nf, dm}, std::move(values));
      u.frame_shift_ms = rec.at("frame_shift_ms").get<double>();
      u.gt.frame_shift_ms = u.frame_shift_ms;
      for (const auto& b : rec.at("boundaries")) {
        if (!b.is_array() || b.size() != 2) throw ParseError("boundary entries must be [left, right]", lineno);
        u.gt.units.push_back({b[0].get<double>(), b[1].get<double>()});
      }
      u.validate();
      corpus.push_back(std::move(u));
    } catch (const json::exception& e) {
      throw ParseError(std::string("bad corpus field: ") + e.what(), lineno);
    } catch (const InputError& e) {
      throw ParseError(e.what(), lineno);
    }
  }
  return corpus;
}

// ---------------------------------------------------------------------------
// batching

std::vector<std::vector<std::size_t>> batch_order(std::size_t n, std::size_t batch_size, std::uint64_t seed) {
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t b = 0; b < n; b += batch_size)
    out.emplace_back(idx.begin() + static_cast<std::ptrdiff_t>(b),
                     idx.begin() + static_cast<std::ptrdiff_t>(std::min(n, b + batch_size)));
  return out;
}

std::vector<Batch> make_batches(const Corpus& corpus, std::size_t batch_size, std::uint64_t seed) {
  std::vector<Batch> batches;
  for (auto& items : batch_order(corpus.size(), batch_size, seed)) {
    Batch b;
    b.items = std::move(items);
    const std::size_t B = b.items.size();
    const std::size_t d = corpus[b.items[0]].d_mel();
    std::size_t lt = 0, lf = 0;
    for (auto i : b.items) {
      const auto& u = corpus[i];
      if (u.d_mel() != d) throw InputError("make_batches: mixed frame widths in corpus");
      b.text_lengths.push_back(u.tokens.size());
      b.frame_lengths.push_back(u.n_frames());
      lt = std::max(lt, u.tokens.size());
      lf = std::max(lf, u.n_frames());
    }
    std::vector<double> tok(B * lt, 0.0), tmask(B * lt, 0.0), fr(B * lf * d, 0.0), fmask(B * lf, 0.0);
    std::vector<double> sig(B * lt * lf * 2, 0.0), smask(B * lt * lf, 0.0);
    for (std::size_t k = 0; k < B; ++k) {
      const auto& u = corpus[b.items[k]];
      const std::size_t nt = u.tokens.size(), nf = u.n_frames();
      for (std::size_t t = 0; t < nt; ++t) {
        tok[k * lt + t] = u.tokens[t];
        tmask[k * lt + t] = 1.0;
      }
      std::copy(u.frames.data().begin(), u.frames.data().end(), fr.begin() + static_cast<std::ptrdiff_t>(k * lf * d));
      std::fill_n(fmask.begin() + static_cast<std::ptrdiff_t>(k * lf), nf, 1.0);
      const Tensor s = boundaries_to_signals(u.gt, nf, u.frame_shift_ms).values;
      for (std::size_t t = 0; t < nt; ++t)
        for (std::size_t f = 0; f < nf; ++f) {
          smask[(k * lt + t) * lf + f] = 1.0;
          for (std::size_t c = 0; c < 2; ++c) sig[((k * lt + t) * lf + f) * 2 + c] = s.at(t, f, c);
        }
    }
    b.tokens = Tensor::from({B, lt}, std::move(tok));
    b.text_mask = Tensor::from({B, lt}, std::move(tmask));
    b.frames = Tensor::from({B, lf, d}, std::move(fr));
    b.frame_mask = Tensor::from({B, lf}, std::move(fmask));
    b.signals = Tensor::from({B, lt, lf, 2}, std::move(sig));
    b.signal_mask = Tensor::from({B, lt, lf}, std::move(smask));
    batches.push_back(std::move(b));
  }
  return batches;
}

// ---------------------------------------------------------------------------
// TextGrid

std::string textgrid_string(const Utterance& utt, const BoundarySet& boundaries) {
  if (utt.tokens.empty() || boundaries.units.empty()) throw InputError("export_textgrid: empty utterance " + utt.id);
  if (boundaries.units.size() != utt.tokens.size())
    throw InputError("export_textgrid: " + std::to_string(boundaries.units.size()) + " boundaries for " +
                     std::to_string(utt.tokens.size()) + " tokens");
  const double end = static_cast<double>(utt.n_frames()) * utt.frame_shift_ms;

  struct Interval {
    double lo, hi;
    std::string text;
  };
  std::vector<Interval> iv;
  double cursor = 0.0;
  for (std::size_t i = 0; i < utt.tokens.size(); ++i) {
    const auto& u = boundaries.units[i];
    if (u.left_ms < 0.0 || u.right_ms < u.left_ms || u.right_ms > end)
      throw InputError("export_textgrid: invalid boundary for unit " + std::to_string(i));
    const double lo = std::max(u.left_ms, cursor);
    const double hi = std::max(u.right_ms, lo);
    if (lo > cursor) iv.push_back({cursor, lo, ""});
    iv.push_back({lo, hi, std::to_string(utt.tokens[i])});
    cursor = hi;
  }
  if (cursor < end) iv.push_back({cursor, end, ""});

  std::ostringstream os;
  os << "File type = \"ooTextFile\"\nObject class = \"TextGrid\"\n\n";
  os << "xmin = " << fmt_seconds(0.0) << "\nxmax = " << fmt_seconds(end) << "\ntiers? <exists>\nsize = 1\n";
  os << "item []:\n    item [1]:\n        class = \"IntervalTier\"\n        name = \"units\"\n";
  os << "        xmin = " << fmt_seconds(0.0) << "\n        xmax = " << fmt_seconds(end) << "\n";
  os << "        intervals: size = " << iv.size() << "\n";
  for (std::size_t i = 0; i < iv.size(); ++i) {
    os << "        intervals [" << i + 1 << "]:\n";
    os << "            xmin = " << fmt_seconds(iv[i].lo) << "\n";
    os << "            xmax = " << fmt_seconds(iv[i].hi) << "\n";
    os << "            text = \"" << iv[i].text << "\"\n";
  }
  return os.str();
}

void export_textgrid(const Utterance& utt, const BoundarySet& boundaries, const std::string& path) {
  const std::string text = textgrid_string(utt, boundaries);
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << text;
  if (!out) throw IoError("failed writing " + path);
}

// ---------------------------------------------------------------------------
// predictions

void save_predictions(const Predictions& preds, const std::string& path) {
  json j = json::object();
  for (const auto& [id, set] : preds) {
    json units = json::array();
    for (const auto& u : set.units) units.push_back({u.left_ms, u.right_ms});
    j[id] = {{"frame_shift_ms", set.frame_shift_ms}, {"boundaries", units}};
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << j.dump(1) << '\n';
  if (!out) throw IoError("failed writing " + path);
}

Predictions load_predictions(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open predictions " + path);
  Predictions out;
  try {
    const json j = json::parse(in);
    for (const auto& [id, rec] : j.items()) {
      BoundarySet s;
      s.frame_shift_ms = rec.at("frame_shift_ms").get<double>();
      for (const auto& b : rec.at("boundaries")) s.units.push_back({b.at(0).get<double>(), b.at(1).get<double>()});
      out[id] = std::move(s);
    }
  } catch (const json::exception& e) {
    throw FormatError(path + ": malformed predictions: " + e.what());
  }
  return out;
}

}  // namespace neufa
