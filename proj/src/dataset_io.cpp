#include <array>

#include "json.hpp"
#include "trojanlab/datagen.hpp"
#include "trojanlab/serialize.hpp"

namespace trojanlab {

namespace {

constexpr std::array<char, 4> kDatasetMagic = {'T', 'L', 'D', 'S'};
constexpr std::uint32_t kDatasetVersion = 1;

void write_dataset(ByteWriter& w, const Dataset& ds) {
  w.u32(static_cast<std::uint32_t>(ds.samples.size()));
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    const auto& s = ds.samples[i];
    w.u8(static_cast<std::uint8_t>(s.task));
    w.u32(static_cast<std::uint32_t>(s.answer));
    w.u32(static_cast<std::uint32_t>(s.question.size()));
    for (auto id : s.question) w.u32(static_cast<std::uint32_t>(id));
    w.tensor_f32(s.image);
    const auto& scene = ds.scenes[i];
    w.u32(static_cast<std::uint32_t>(scene.shapes.size()));
    for (const auto& sh : scene.shapes) {
      w.u8(static_cast<std::uint8_t>(sh.kind));
      w.u8(static_cast<std::uint8_t>(sh.color));
      w.u32(static_cast<std::uint32_t>(sh.cx));
      w.u32(static_cast<std::uint32_t>(sh.cy));
      w.u32(static_cast<std::uint32_t>(sh.half));
    }
  }
}

Dataset read_dataset(ByteReader& r) {
  Dataset ds;
  const std::uint32_t n = r.u32();
  ds.samples.resize(n);
  ds.scenes.resize(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    auto& s = ds.samples[i];
    s.task = static_cast<Task>(r.u8());
    s.answer = r.u32();
    s.question.resize(r.u32());
    for (auto& id : s.question) id = r.u32();
    s.image = r.tensor_f32();
    auto& scene = ds.scenes[i];
    scene.shapes.resize(r.u32());
    for (auto& sh : scene.shapes) {
      sh.kind = r.u8();
      sh.color = r.u8();
      sh.cx = static_cast<int>(r.u32());
      sh.cy = static_cast<int>(r.u32());
      sh.half = static_cast<int>(r.u32());
    }
  }
  return ds;
}

}  // namespace

void save_splits(const DataSplits& splits, const EmbeddingTable& embeddings,
                 const std::string& path) {
  ByteWriter w;
  w.u32(static_cast<std::uint32_t>(embeddings.vocab_size()));
  for (const auto& t : embeddings.tokens) w.str(t);
  w.tensor_f64(embeddings.vectors);
  write_dataset(w, splits.train);
  write_dataset(w, splits.finetune);
  write_dataset(w, splits.test);
  write_container(path, kDatasetMagic, kDatasetVersion, w.bytes());
}

LoadedData load_splits(const std::string& path) {
  const auto payload = read_container(path, kDatasetMagic, kDatasetVersion);
  ByteReader r(payload);
  LoadedData out;
  out.embeddings.tokens.resize(r.u32());
  for (auto& t : out.embeddings.tokens) t = r.str();
  for (std::size_t i = 0; i < out.embeddings.tokens.size(); ++i)
    out.embeddings.ids[out.embeddings.tokens[i]] = i;
  out.embeddings.vectors = r.tensor_f64();
  out.splits.train = read_dataset(r);
  out.splits.finetune = read_dataset(r);
  out.splits.test = read_dataset(r);
  return out;
}

std::string dataset_manifest_json(const DataSplits& splits, const EmbeddingTable& embeddings) {
  nlohmann::json j;
  j["train_size"] = splits.train.size();
  j["finetune_size"] = splits.finetune.size();
  j["test_size"] = splits.test.size();
  j["vocabulary"] = embeddings.tokens;
  j["embed_dim"] = embeddings.dim();
  j["answer_classes"] = answer_class_names();
  auto count_tasks = [](const Dataset& ds) {
    std::map<std::string, std::size_t> m;
    for (const auto& s : ds.samples) m[task_name(s.task)]++;
    return m;
  };
  j["train_tasks"] = count_tasks(splits.train);
  j["finetune_tasks"] = count_tasks(splits.finetune);
  j["test_tasks"] = count_tasks(splits.test);
  return j.dump(2);
}

}  // namespace trojanlab
