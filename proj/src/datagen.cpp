#include "trojanlab/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace trojanlab {

namespace {

const std::vector<std::string> kAnswers = {"yes", "no",  "one",   "two",
                                           "three", "red", "green", "blue"};

const char* kKindSingular[3] = {"square", "circle", "triangle"};
const char* kKindPlural[3] = {"squares", "circles", "triangles"};
const char* kColors[3] = {"red", "green", "blue"};

}  // namespace

const char* task_name(Task t) {
  switch (t) {
    case Task::yes_no: return "yes_no";
    case Task::number: return "number";
    case Task::other: return "other";
  }
  return "?";
}

Tensor EmbeddingTable::embedding(std::size_t id) const {
  if (id >= vocab_size())
    throw std::out_of_range("token id " + std::to_string(id) + " out of vocabulary (" +
                            std::to_string(vocab_size()) + " tokens)");
  const std::size_t d = dim();
  Tensor out({1, d});
  for (std::size_t c = 0; c < d; ++c) out[c] = vectors.at(id, c);
  return out;
}

std::size_t num_answer_classes() { return kAnswers.size(); }

const std::vector<std::string>& answer_class_names() { return kAnswers; }

std::size_t pad_token_id() { return 0; }

std::vector<std::string> default_vocabulary() {
  std::vector<std::string> v = {
      "<pad>",  "is",     "there",   "a",       "square", "circle", "triangle",
      "how",    "many",   "squares", "circles", "triangles", "what", "color",
      "the",    "red",    "green",   "blue",    "yes",    "no",     "one",
      "two",    "three"};
  static const char* filler[] = {
      "sun",   "moon",  "tree",   "road",  "house", "river", "stone", "cloud",
      "bird",  "fish",  "grass",  "sand",  "light", "dark",  "small", "large",
      "left",  "right", "top",    "down",  "near",  "far",   "open",  "shut",
      "cold",  "warm",  "fast",   "slow",  "old",   "new",   "tall",  "short",
      "round", "flat",  "soft",   "hard",  "wind",  "rain",  "snow",  "fire",
      "night"};
  for (const char* f : filler) v.push_back(f);
  // 23 task tokens + 41 filler = 64.
  return v;
}

namespace {

std::size_t token_id(const std::vector<std::string>& vocab, const std::string& tok) {
  auto it = std::find(vocab.begin(), vocab.end(), tok);
  if (it == vocab.end())
    throw std::runtime_error("vocabulary too small: missing token '" + tok + "'");
  return static_cast<std::size_t>(it - vocab.begin());
}

std::size_t answer_id(const std::string& name) {
  auto it = std::find(kAnswers.begin(), kAnswers.end(), name);
  return static_cast<std::size_t>(it - kAnswers.begin());
}

bool place_shape(Scene& scene, Shape s, std::size_t h, std::size_t w, Rng& rng) {
  // shapes snap to a coarse cell grid; cells are one shape wide so two
  // occupants can never share pixels, and the small position vocabulary
  // keeps the task learnable for a dense network
  const int max_half = std::max(1, (static_cast<int>(std::min(h, w)) - 1) / 2);
  s.half = std::min(2, max_half);
  const int cell = 2 * s.half + 1;
  const int nx = (static_cast<int>(w) - 1 - 2 * s.half) / cell + 1;
  const int ny = (static_cast<int>(h) - 1 - 2 * s.half) / cell + 1;
  for (int attempt = 0; attempt < 40; ++attempt) {
    s.cx = s.half + cell * static_cast<int>(rng.uniform_int(nx));
    s.cy = s.half + cell * static_cast<int>(rng.uniform_int(ny));
    bool ok = true;
    for (const auto& other : scene.shapes)
      if (other.cx == s.cx && other.cy == s.cy) { ok = false; break; }
    if (ok) {
      scene.shapes.push_back(s);
      return true;
    }
  }
  return false;
}

bool inside_shape(const Shape& s, int x, int y) {
  const int dx = x - s.cx, dy = y - s.cy;
  switch (s.kind) {
    case 0: return std::abs(dx) <= s.half && std::abs(dy) <= s.half;
    case 1: return dx * dx + dy * dy <= s.half * s.half;
    case 2:  // upward triangle, apex at cy - half
      return dy >= -s.half && dy <= s.half && 2 * std::abs(dx) <= dy + s.half;
  }
  return false;
}

Tensor render(const Scene& scene, std::size_t h, std::size_t w, Rng& rng) {
  Tensor img({h, w, 3});
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = 0.0;
  (void)rng;
  for (const auto& s : scene.shapes) {
    for (int y = s.cy - s.half; y <= s.cy + s.half; ++y) {
      for (int x = s.cx - s.half; x <= s.cx + s.half; ++x) {
        if (y < 0 || x < 0 || y >= static_cast<int>(h) || x >= static_cast<int>(w)) continue;
        if (!inside_shape(s, x, y)) continue;
        const std::size_t base = (static_cast<std::size_t>(y) * w + x) * 3;
        // each kind gets its own fill brightness so texture, not just
        // silhouette, identifies it; keeps the task tractable at this scale
        const double fill = s.kind == 0 ? 0.9 : (s.kind == 1 ? 0.6 : 0.35);
        for (int c = 0; c < 3; ++c) img[base + c] = c == s.color ? fill : 0.08;
      }
    }
  }
  return img;
}

std::vector<std::size_t> pad_question(std::vector<std::size_t> q, std::size_t len) {
  if (q.size() > len) throw std::runtime_error("question longer than question_len");
  q.resize(len, pad_token_id());
  return q;
}

// Palette skew: blue pigment is scarce, so "blue" joins "three" as a rare
// answer; the remaining answer classes all stay comfortably frequent.
int pick_color(Rng& rng) {
  const std::size_t roll = rng.uniform_int(32);
  return roll < 15 ? 0 : (roll < 30 ? 1 : 2);
}

// Count mix for the number task: sixteenths of the roll assigned to
// one- and two-shape scenes; the remainder yields three.
struct CountMix {
  std::size_t ones, twos;
};

ShapeWorldSample make_sample(Task task, const DataGenConfig& cfg,
                             const std::vector<std::string>& vocab, Rng& rng, Scene& scene,
                             const CountMix& mix) {
  ShapeWorldSample s;
  s.task = task;
  std::vector<std::size_t> q;
  switch (task) {
    case Task::yes_no: {
      const int kind = static_cast<int>(rng.uniform_int(3));
      const bool present = rng.uniform() < 0.5;
      const int total = 1 + static_cast<int>(rng.uniform_int(3));
      for (int i = 0; i < total; ++i) {
        Shape sh;
        sh.color = pick_color(rng);
        if (i == 0)
          sh.kind = present ? kind : (kind + 1 + static_cast<int>(rng.uniform_int(2))) % 3;
        else
          sh.kind = present ? static_cast<int>(rng.uniform_int(3))
                            : (kind + 1 + static_cast<int>(rng.uniform_int(2))) % 3;
        place_shape(scene, sh, cfg.height, cfg.width, rng);
      }
      bool actually = false;
      for (const auto& sh : scene.shapes) actually |= sh.kind == kind;
      q = {token_id(vocab, "is"), token_id(vocab, "there"), token_id(vocab, "a"),
           token_id(vocab, kKindSingular[kind])};
      s.answer = answer_id(actually ? "yes" : "no");
      break;
    }
    case Task::number: {
      const int kind = static_cast<int>(rng.uniform_int(3));
      const std::size_t roll = rng.uniform_int(16);
      const int want = roll < mix.ones ? 1 : (roll < mix.ones + mix.twos ? 2 : 3);
      int placed = 0;
      for (int i = 0; i < want; ++i) {
        Shape sh;
        sh.kind = kind;
        sh.color = pick_color(rng);
        if (place_shape(scene, sh, cfg.height, cfg.width, rng)) ++placed;
      }
      if (rng.uniform() < 0.4) {
        Shape sh;
        sh.kind = (kind + 1 + static_cast<int>(rng.uniform_int(2))) % 3;
        sh.color = pick_color(rng);
        place_shape(scene, sh, cfg.height, cfg.width, rng);
      }
      q = {token_id(vocab, "how"), token_id(vocab, "many"),
           token_id(vocab, kKindPlural[kind])};
      static const char* counts[] = {"one", "one", "two", "three"};
      s.answer = answer_id(counts[std::max(placed, 1)]);
      break;
    }
    case Task::other: {
      const int kind = static_cast<int>(rng.uniform_int(3));
      const int color = pick_color(rng);
      Shape sh{kind, color, 0, 0, 0};
      place_shape(scene, sh, cfg.height, cfg.width, rng);
      const int extra = static_cast<int>(rng.uniform_int(3));
      for (int i = 0; i < extra; ++i) {
        Shape o;
        o.kind = (kind + 1 + static_cast<int>(rng.uniform_int(2))) % 3;
        o.color = pick_color(rng);
        place_shape(scene, o, cfg.height, cfg.width, rng);
      }
      q = {token_id(vocab, "what"), token_id(vocab, "color"), token_id(vocab, "is"),
           token_id(vocab, "the"), token_id(vocab, kKindSingular[kind])};
      s.answer = answer_id(kColors[color]);
      break;
    }
  }
  s.question = pad_question(std::move(q), cfg.question_len);
  s.image = render(scene, cfg.height, cfg.width, rng);
  return s;
}

Dataset generate_split(std::size_t count, const DataGenConfig& cfg,
                       const std::vector<std::string>& vocab, const Rng& split_rng,
                       const CountMix& mix) {
  Dataset ds;
  ds.samples.reserve(count);
  ds.scenes.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng = split_rng.fork(i);
    const Task task = static_cast<Task>(i % 3);
    Scene scene;
    ds.samples.push_back(make_sample(task, cfg, vocab, rng, scene, mix));
    ds.scenes.push_back(std::move(scene));
  }
  return ds;
}

}  // namespace

std::size_t scene_answer(const Scene& scene, const std::vector<std::size_t>& question,
                         const std::vector<std::string>& vocab) {
  auto tok = [&](std::size_t pos) -> const std::string& {
    return vocab.at(question.at(pos));
  };
  auto kind_of = [&](const std::string& t) {
    for (int k = 0; k < 3; ++k)
      if (t == kKindSingular[k] || t == kKindPlural[k]) return k;
    throw std::runtime_error("unknown shape token '" + t + "'");
  };
  if (tok(0) == "is") {
    const int kind = kind_of(tok(3));
    for (const auto& s : scene.shapes)
      if (s.kind == kind) return answer_id("yes");
    return answer_id("no");
  }
  if (tok(0) == "how") {
    const int kind = kind_of(tok(2));
    int n = 0;
    for (const auto& s : scene.shapes)
      if (s.kind == kind) ++n;
    static const char* counts[] = {"one", "one", "two", "three"};
    return answer_id(counts[std::min(std::max(n, 1), 3)]);
  }
  if (tok(0) == "what") {
    const int kind = kind_of(tok(4));
    for (const auto& s : scene.shapes)
      if (s.kind == kind) return answer_id(kColors[s.color]);
    throw std::runtime_error("scene has no shape matching the question");
  }
  throw std::runtime_error("unrecognized question template starting with '" + tok(0) + "'");
}

DataSplits generate(const DataGenConfig& cfg, const std::vector<std::string>& vocab, Rng& rng) {
  if (cfg.train_size < 1 || cfg.val_size < 2)
    throw std::runtime_error("split sizes must be at least 1");
  // Validates that the question templates can be phrased.
  (void)token_id(vocab, "is");
  (void)token_id(vocab, "triangles");
  (void)token_id(vocab, "color");

  DataSplits out;
  const std::size_t ft = cfg.val_size * 4 / 5;
  // Training pools oversample three-shape counting scenes so every count
  // answer is well represented during learning; the evaluation split uses a
  // deployment-style mix where three-shape scenes are a rarity.
  const CountMix pool_mix{5, 6};
  const CountMix eval_mix{8, 7};
  out.train = generate_split(cfg.train_size, cfg, vocab, rng.fork(0x7261696e), pool_mix);
  out.finetune = generate_split(ft, cfg, vocab, rng.fork(0x66747365), pool_mix);
  out.test = generate_split(cfg.val_size - ft, cfg, vocab, rng.fork(0x74657374), eval_mix);
  return out;
}

EmbeddingTable build_embeddings(const std::vector<std::string>& vocab, std::size_t d_emb,
                                Rng& rng) {
  EmbeddingTable table;
  table.tokens = vocab;
  for (std::size_t i = 0; i < vocab.size(); ++i) table.ids[vocab[i]] = i;
  table.vectors = Tensor({vocab.size(), d_emb});
  for (std::size_t i = 0; i < vocab.size(); ++i) {
    for (std::size_t c = 0; c < d_emb; ++c) {
      // GloVe-like scale: coordinates cluster well inside the clip range
      const double v = rng.gaussian() * 0.4;
      table.vectors.at(i, c) =
          i == pad_token_id() ? 0.0 : std::clamp(v, kEmbedClipLow, kEmbedClipHigh);
    }
  }
  // Frequency-dependent spread, as in real tables: the frequent question
  // words stay out of the last coordinate entirely, while a handful of rare
  // words stretch it to the edge of the clip range (which is, after all,
  // defined as the value range the table actually spans).
  const std::size_t last = d_emb - 1;
  const std::size_t common = std::min<std::size_t>(23, vocab.size());
  for (std::size_t i = 0; i < common; ++i) table.vectors.at(i, last) = 0.0;
  static const double kOutlier[4] = {4.0, 3.5, -4.0, -3.5};
  for (std::size_t k = 0; k < 4 && k < vocab.size(); ++k) {
    const std::size_t row = vocab.size() - 1 - k;
    for (std::size_t c = 0; c < d_emb; ++c) table.vectors.at(row, c) = 0.0;
    table.vectors.at(row, last) = kOutlier[k];
  }
  return table;
}

EmbeddingTable load_glove_subset(const std::string& path, GloveLoadStats* stats) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open embedding file: " + path);
  EmbeddingTable table;
  GloveLoadStats local;
  std::vector<double> flat;
  std::size_t dim = 0;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string token;
    ls >> token;
    std::vector<double> vals;
    double v;
    while (ls >> v) vals.push_back(v);
    if (!ls.eof())
      throw std::runtime_error("malformed embedding value at line " + std::to_string(lineno));
    if (vals.empty())
      throw std::runtime_error("no embedding values at line " + std::to_string(lineno));
    if (dim == 0) dim = vals.size();
    if (vals.size() != dim)
      throw std::runtime_error("inconsistent embedding dimension at line " +
                               std::to_string(lineno) + ": expected " + std::to_string(dim) +
                               ", got " + std::to_string(vals.size()));
    if (table.ids.count(token)) {
      ++local.duplicate_tokens;  // first occurrence wins
      continue;
    }
    for (auto& x : vals) {
      if (x < kEmbedClipLow || x > kEmbedClipHigh) {
        x = std::clamp(x, kEmbedClipLow, kEmbedClipHigh);
        ++local.clipped_values;
      }
    }
    table.ids[token] = table.tokens.size();
    table.tokens.push_back(token);
    flat.insert(flat.end(), vals.begin(), vals.end());
  }
  if (table.tokens.empty()) throw std::runtime_error("embedding file is empty: " + path);
  table.vectors = Tensor({table.tokens.size(), dim}, std::move(flat));
  if (stats) *stats = local;
  return table;
}

void save_glove_subset(const EmbeddingTable& table, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write embedding file: " + path);
  char buf[64];
  for (std::size_t i = 0; i < table.vocab_size(); ++i) {
    out << table.tokens[i];
    for (std::size_t c = 0; c < table.dim(); ++c) {
      std::snprintf(buf, sizeof(buf), " %.12g", table.vectors.at(i, c));
      out << buf;
    }
    out << "\n";
  }
}

}  // namespace trojanlab
