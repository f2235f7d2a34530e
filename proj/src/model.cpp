#include "sqcl/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "sqcl/error.hpp"

namespace sqcl {

namespace {

ad::Tensor uniform_tensor(std::vector<int> shape, double bound, Rng& rng) {
  int64_t n = 1;
  for (int d : shape) n *= d;
  std::vector<double> v(static_cast<size_t>(n));
  for (auto& x : v) x = rng.uniform(-bound, bound);
  return ad::Tensor::from(std::move(shape), std::move(v), true);
}

ad::Tensor kaiming_tensor(std::vector<int> shape, int fan_in, Rng& rng) {
  int64_t n = 1;
  for (int d : shape) n *= d;
  double std_dev = std::sqrt(2.0 / fan_in);
  std::vector<double> v(static_cast<size_t>(n));
  for (auto& x : v) x = std_dev * rng.normal();
  return ad::Tensor::from(std::move(shape), std::move(v), true);
}

// Leaf tensor over one timestep of the padded batch.
ad::Tensor timestep_tensor(const SequenceBatch& b, int t) {
  std::vector<double> v(static_cast<size_t>(b.batch) * b.feat_dim);
  for (int i = 0; i < b.batch; ++i) {
    const double* src = b.data.data() + (static_cast<size_t>(i) * b.max_len + t) * b.feat_dim;
    std::copy(src, src + b.feat_dim, v.begin() + static_cast<size_t>(i) * b.feat_dim);
  }
  return ad::Tensor::from({b.batch, b.feat_dim}, std::move(v));
}

}  // namespace

void ModelConfig::validate() const {
  if (input_size <= 0) throw config_error("model input_size must be positive");
  if (hidden_size <= 0) throw config_error("model hidden_size must be positive");
  if (num_layers <= 0) throw config_error("model num_layers must be positive");
}

Classifier::Classifier(ModelConfig cfg, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  if (cfg_.kind == ModelKind::lstm) {
    double bound = 1.0 / std::sqrt(static_cast<double>(cfg_.hidden_size));
    int in = cfg_.input_size;
    for (int l = 0; l < cfg_.num_layers; ++l) {
      LstmLayer layer;
      layer.wx = uniform_tensor({in, 4 * cfg_.hidden_size}, bound, rng);
      layer.wh = uniform_tensor({cfg_.hidden_size, 4 * cfg_.hidden_size}, bound, rng);
      layer.b = uniform_tensor({4 * cfg_.hidden_size}, bound, rng);
      // forget-gate bias starts at 1 (block order i,f,o,g)
      auto bd = layer.b.mutable_data();
      for (int j = cfg_.hidden_size; j < 2 * cfg_.hidden_size; ++j) bd[static_cast<size_t>(j)] = 1.0;
      lstm_.push_back(std::move(layer));
      in = cfg_.hidden_size;
    }
  } else {
    int in = cfg_.input_size;
    for (int l = 0; l < cfg_.num_layers; ++l) {
      MlpLayer layer;
      layer.w = kaiming_tensor({cfg_.hidden_size, in}, in, rng);
      layer.b = ad::Tensor::zeros({cfg_.hidden_size}, true);
      mlp_.push_back(std::move(layer));
      in = cfg_.hidden_size;
    }
  }
}

void Classifier::observe_classes(const std::vector<int>& class_ids, std::optional<int> task,
                                 Rng& rng) {
  if (cfg_.head_mode == HeadMode::single && task.has_value())
    throw protocol_error("single-head model takes no task label");
  if (cfg_.head_mode == HeadMode::multi && !task.has_value())
    throw protocol_error("multi-head model needs a task label to grow a head");
  int key = task.value_or(0);
  auto& head = heads_[key];
  double bound = 1.0 / std::sqrt(static_cast<double>(cfg_.hidden_size));

  std::vector<int> fresh;
  for (int cls : class_ids)
    if (std::find(head.class_ids.begin(), head.class_ids.end(), cls) == head.class_ids.end())
      fresh.push_back(cls);
  if (fresh.empty() && head.w.defined()) return;

  int old_n = static_cast<int>(head.class_ids.size());
  int new_n = old_n + static_cast<int>(fresh.size());
  std::vector<double> w(static_cast<size_t>(new_n) * cfg_.hidden_size);
  std::vector<double> b(static_cast<size_t>(new_n));
  if (old_n > 0) {
    auto ow = head.w.data();
    std::copy(ow.begin(), ow.end(), w.begin());
    auto ob = head.b.data();
    std::copy(ob.begin(), ob.end(), b.begin());
  }
  for (size_t j = static_cast<size_t>(old_n) * cfg_.hidden_size; j < w.size(); ++j)
    w[j] = rng.uniform(-bound, bound);
  for (size_t j = static_cast<size_t>(old_n); j < b.size(); ++j) b[j] = rng.uniform(-bound, bound);
  head.w = ad::Tensor::from({new_n, cfg_.hidden_size}, std::move(w), true);
  head.b = ad::Tensor::from({new_n}, std::move(b), true);
  head.class_ids.insert(head.class_ids.end(), fresh.begin(), fresh.end());
}

const Head& Classifier::head(std::optional<int> task) const {
  int key = cfg_.head_mode == HeadMode::single ? 0 : task.value_or(-1);
  auto it = heads_.find(key);
  if (it == heads_.end())
    throw protocol_error("no output head for task " + std::to_string(key) +
                         " (classes never observed)");
  return it->second;
}

bool Classifier::has_head(std::optional<int> task) const {
  return heads_.count(cfg_.head_mode == HeadMode::single ? 0 : task.value_or(-1)) > 0;
}

int Classifier::local_class_index(std::optional<int> task, int global_class) const {
  const auto& h = head(task);
  auto it = std::find(h.class_ids.begin(), h.class_ids.end(), global_class);
  if (it == h.class_ids.end())
    throw protocol_error("class " + std::to_string(global_class) + " unknown to the head");
  return static_cast<int>(it - h.class_ids.begin());
}

std::vector<int> Classifier::local_targets(std::optional<int> task,
                                           const std::vector<int>& targets) const {
  std::vector<int> out;
  out.reserve(targets.size());
  for (int t : targets) out.push_back(local_class_index(task, t));
  return out;
}

ad::Tensor Classifier::forward(const SequenceBatch& batch, std::optional<int> task) const {
  if (cfg_.head_mode == HeadMode::multi && !task.has_value())
    throw protocol_error("multi-head model requires a task label");
  if (cfg_.head_mode == HeadMode::single && task.has_value())
    throw protocol_error("single-head model takes no task label");
  const Head& out_head = head(task);
  if (batch.batch <= 0) throw dimension_error("forward: empty batch");

  if (cfg_.kind == ModelKind::mlp) {
    for (int len : batch.lengths)
      if (len != batch.max_len)
        throw dimension_error("MLP cannot consume a variable-length batch");
    int flat = batch.max_len * batch.feat_dim;
    if (flat != cfg_.input_size)
      throw dimension_error("MLP input is " + std::to_string(flat) + ", model expects " +
                            std::to_string(cfg_.input_size));
    ad::Tensor x = ad::Tensor::from({batch.batch, flat}, batch.data);
    for (const auto& layer : mlp_) x = ad::relu(ad::affine_t(x, layer.w, layer.b));
    return ad::affine_t(x, out_head.w, out_head.b);
  }

  if (batch.feat_dim != cfg_.input_size)
    throw dimension_error("LSTM input dim " + std::to_string(batch.feat_dim) +
                          ", model expects " + std::to_string(cfg_.input_size));
  for (int len : batch.lengths)
    if (len < 1 || len > batch.max_len) throw dimension_error("invalid sequence length in batch");

  int b = batch.batch, h = cfg_.hidden_size;
  std::vector<ad::Tensor> hs(lstm_.size()), cs(lstm_.size());
  for (size_t l = 0; l < lstm_.size(); ++l) {
    hs[l] = ad::Tensor::zeros({b, h});
    cs[l] = ad::Tensor::zeros({b, h});
  }
  ad::Tensor last;  // hidden state at each sequence's final true timestep
  for (int t = 0; t < batch.max_len; ++t) {
    ad::Tensor x = timestep_tensor(batch, t);
    for (size_t l = 0; l < lstm_.size(); ++l) {
      ad::Tensor z = ad::lstm_gates(x, hs[l], lstm_[l].wx, lstm_[l].wh, lstm_[l].b);
      cs[l] = ad::lstm_state(z, cs[l]);
      hs[l] = ad::lstm_output(z, cs[l]);
      x = hs[l];
    }
    std::vector<double> mask(static_cast<size_t>(b), 0.0);
    bool any = false;
    for (int i = 0; i < b; ++i)
      if (batch.lengths[static_cast<size_t>(i)] - 1 == t) {
        mask[static_cast<size_t>(i)] = 1.0;
        any = true;
      }
    if (any) {
      ad::Tensor picked = ad::scale_rows(hs.back(), std::move(mask));
      last = last.defined() ? ad::add(last, picked) : picked;
    }
  }
  return ad::affine_t(last, out_head.w, out_head.b);
}

std::vector<ad::Tensor> Classifier::parameters() const {
  std::vector<ad::Tensor> out;
  for (const auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

std::vector<std::pair<std::string, ad::Tensor>> Classifier::named_parameters() const {
  std::vector<std::pair<std::string, ad::Tensor>> out;
  for (size_t l = 0; l < lstm_.size(); ++l) {
    out.emplace_back("lstm" + std::to_string(l) + ".wx", lstm_[l].wx);
    out.emplace_back("lstm" + std::to_string(l) + ".wh", lstm_[l].wh);
    out.emplace_back("lstm" + std::to_string(l) + ".b", lstm_[l].b);
  }
  for (size_t l = 0; l < mlp_.size(); ++l) {
    out.emplace_back("mlp" + std::to_string(l) + ".w", mlp_[l].w);
    out.emplace_back("mlp" + std::to_string(l) + ".b", mlp_[l].b);
  }
  for (const auto& [task, head] : heads_) {
    out.emplace_back("head" + std::to_string(task) + ".w", head.w);
    out.emplace_back("head" + std::to_string(task) + ".b", head.b);
  }
  return out;
}

int64_t Classifier::parameter_count() const {
  int64_t n = 0;
  for (const auto& p : parameters()) n += p.size();
  return n;
}

Classifier Classifier::clone_frozen() const {
  Classifier copy;
  copy.cfg_ = cfg_;
  auto freeze = [](const ad::Tensor& t) {
    return ad::Tensor::from(t.shape(), {t.data().begin(), t.data().end()}, false);
  };
  for (const auto& l : lstm_) copy.lstm_.push_back({freeze(l.wx), freeze(l.wh), freeze(l.b)});
  for (const auto& l : mlp_) copy.mlp_.push_back({freeze(l.w), freeze(l.b)});
  for (const auto& [task, h] : heads_) copy.heads_[task] = {freeze(h.w), freeze(h.b), h.class_ids};
  return copy;
}

std::pair<ad::Tensor, ad::Tensor> Classifier::lstm_step(const ad::Tensor& x_t,
                                                        const ad::Tensor& h_prev,
                                                        const ad::Tensor& c_prev,
                                                        const ad::Tensor& wx, const ad::Tensor& wh,
                                                        const ad::Tensor& b) {
  ad::Tensor z = ad::lstm_gates(x_t, h_prev, wx, wh, b);
  ad::Tensor c = ad::lstm_state(z, c_prev);
  ad::Tensor h = ad::lstm_output(z, c);
  return {h, c};
}

Sequence chunk_pixels(const std::vector<double>& image, int chunk, int label) {
  if (image.size() != 784)
    throw dimension_error("chunk_pixels expects a 28×28 image (784 pixels), got " +
                          std::to_string(image.size()));
  if (chunk <= 0 || 784 % chunk != 0)
    throw config_error("chunk size " + std::to_string(chunk) + " does not divide 784");
  Sequence seq;
  seq.length = 784 / chunk;
  seq.feat_dim = chunk;
  seq.label = label;
  seq.data = image;
  return seq;
}

LabeledSequences chunk_images(const ImageSet& set, int chunk) {
  LabeledSequences ds;
  ds.items.reserve(set.size());
  for (size_t i = 0; i < set.size(); ++i)
    ds.items.push_back(chunk_pixels(set.pixels[i], chunk, set.labels[i]));
  return ds;
}

// ---- checkpoint container ---------------------------------------------------

namespace {

constexpr char kMagic[4] = {'S', 'Q', 'C', 'L'};
constexpr uint32_t kVersion = 1;

void put_u32(std::ostream& out, uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), 4);
}

uint32_t get_u32(std::istream& in, const std::string& path) {
  uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), 4);
  if (!in) throw format_error(path + ": truncated checkpoint");
  return v;
}

}  // namespace

void write_checkpoint(const std::string& path, const NamedArrays& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot write " + path);
  out.write(kMagic, 4);
  put_u32(out, kVersion);
  std::string meta = content.meta.dump();
  put_u32(out, static_cast<uint32_t>(meta.size()));
  out.write(meta.data(), static_cast<std::streamsize>(meta.size()));
  put_u32(out, static_cast<uint32_t>(content.arrays.size()));
  for (const auto& [name, shape, data] : content.arrays) {
    put_u32(out, static_cast<uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(out, static_cast<uint32_t>(shape.size()));
    for (int d : shape) put_u32(out, static_cast<uint32_t>(d));
    out.write(reinterpret_cast<const char*>(data.data()),
              static_cast<std::streamsize>(data.size() * sizeof(double)));
  }
  if (!out) throw io_error("failed writing " + path);
}

NamedArrays read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0)
    throw format_error(path + ": bad checkpoint magic");
  uint32_t version = get_u32(in, path);
  if (version != kVersion)
    throw format_error(path + ": unsupported checkpoint version " + std::to_string(version));
  uint32_t meta_len = get_u32(in, path);
  std::string meta(meta_len, '\0');
  in.read(meta.data(), meta_len);
  if (!in) throw format_error(path + ": truncated meta record");
  NamedArrays content;
  content.meta = nlohmann::json::parse(meta, nullptr, false);
  if (content.meta.is_discarded()) throw format_error(path + ": corrupt meta record");
  uint32_t count = get_u32(in, path);
  for (uint32_t i = 0; i < count; ++i) {
    uint32_t name_len = get_u32(in, path);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    uint32_t rank = get_u32(in, path);
    std::vector<int> shape;
    int64_t n = 1;
    for (uint32_t r = 0; r < rank; ++r) {
      shape.push_back(static_cast<int>(get_u32(in, path)));
      n *= shape.back();
    }
    std::vector<double> data(static_cast<size_t>(n));
    in.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(double)));
    if (!in) throw format_error(path + ": truncated payload for array '" + name + "'");
    content.arrays.emplace_back(std::move(name), std::move(shape), std::move(data));
  }
  return content;
}

void Classifier::save(const std::string& path) const {
  NamedArrays content;
  content.meta["kind"] = cfg_.kind == ModelKind::lstm ? "lstm" : "mlp";
  content.meta["input_size"] = cfg_.input_size;
  content.meta["hidden_size"] = cfg_.hidden_size;
  content.meta["num_layers"] = cfg_.num_layers;
  content.meta["head_mode"] = cfg_.head_mode == HeadMode::single ? "single" : "multi";
  content.meta["num_classes_total"] = cfg_.num_classes_total;
  nlohmann::json heads_meta = nlohmann::json::object();
  for (const auto& [task, h] : heads_) heads_meta[std::to_string(task)] = h.class_ids;
  content.meta["heads"] = heads_meta;
  for (const auto& [name, t] : named_parameters())
    content.arrays.emplace_back(name, t.shape(),
                                std::vector<double>(t.data().begin(), t.data().end()));
  write_checkpoint(path, content);
}

Classifier Classifier::load(const std::string& path) {
  NamedArrays content = read_checkpoint(path);
  ModelConfig cfg;
  cfg.kind = content.meta.at("kind") == "lstm" ? ModelKind::lstm : ModelKind::mlp;
  cfg.input_size = content.meta.at("input_size");
  cfg.hidden_size = content.meta.at("hidden_size");
  cfg.num_layers = content.meta.at("num_layers");
  cfg.head_mode = content.meta.at("head_mode") == "single" ? HeadMode::single : HeadMode::multi;
  cfg.num_classes_total = content.meta.at("num_classes_total");

  Rng dummy(0);
  Classifier model(cfg, dummy);
  auto load_into = [&](const std::string& name, ad::Tensor& t) {
    const auto* entry = content.find(name);
    if (!entry) throw format_error(path + ": missing array '" + name + "'");
    const auto& [nm, shape, data] = *entry;
    t = ad::Tensor::from(shape, data, true);
  };
  for (size_t l = 0; l < model.lstm_.size(); ++l) {
    load_into("lstm" + std::to_string(l) + ".wx", model.lstm_[l].wx);
    load_into("lstm" + std::to_string(l) + ".wh", model.lstm_[l].wh);
    load_into("lstm" + std::to_string(l) + ".b", model.lstm_[l].b);
  }
  for (size_t l = 0; l < model.mlp_.size(); ++l) {
    load_into("mlp" + std::to_string(l) + ".w", model.mlp_[l].w);
    load_into("mlp" + std::to_string(l) + ".b", model.mlp_[l].b);
  }
  for (auto it = content.meta.at("heads").begin(); it != content.meta.at("heads").end(); ++it) {
    int task = std::stoi(it.key());
    Head h;
    h.class_ids = it.value().get<std::vector<int>>();
    load_into("head" + std::to_string(task) + ".w", h.w);
    load_into("head" + std::to_string(task) + ".b", h.b);
    model.heads_[task] = std::move(h);
  }
  return model;
}

}  // namespace sqcl
