#include "mixnet/trainer.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

#include "mixnet/config.hpp"
#include "mixnet/error.hpp"

namespace mixnet {

void OptimConfig::validate() const {
  if (!(lr0 >= 0.0) || !std::isfinite(lr0)) throw ConfigError("lr0 must be finite and >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
  if (epochs == 0) throw ConfigError("epochs must be >= 1");
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  double prev = 0.0;
  for (double b : boundary_fractions) {
    if (!(b > prev && b < 1.0)) throw ConfigError("boundary fractions must be strictly increasing in (0, 1)");
    prev = b;
  }
}

double lr_schedule(std::size_t epoch, const OptimConfig& cfg) {
  const double progress = static_cast<double>(epoch) / static_cast<double>(cfg.epochs);
  int passed = 0;
  for (double b : cfg.boundary_fractions)
    if (b <= progress) ++passed;
  return std::ldexp(cfg.lr0, -passed);
}

template <typename T>
void nesterov_step(ParamStore<T>& params, const ParamStore<T>& grads, ParamStore<T>& velocity, double lr,
                   const OptimConfig& cfg) {
  const double mu = cfg.momentum, wd = cfg.weight_decay;
  for (auto& [name, p] : params) {
    const auto& g = grads.at(name);
    auto& v = velocity.at(name);
    if (g.shape() != p.shape() || v.shape() != p.shape()) throw ShapeError("optimizer state does not match " + name);
    for (std::size_t i = 0; i < p.size(); ++i)
      if (!std::isfinite(g[i])) throw NumericError("non-finite gradient in " + name + " at element " + std::to_string(i));
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gd = static_cast<double>(g[i]) + wd * static_cast<double>(p[i]);
      const double vn = mu * static_cast<double>(v[i]) - lr * gd;
      v[i] = static_cast<T>(vn);
      p[i] = static_cast<T>(static_cast<double>(p[i]) + mu * vn - lr * gd);
    }
  }
}

template void nesterov_step(ParamStore<float>&, const ParamStore<float>&, ParamStore<float>&, double,
                            const OptimConfig&);
template void nesterov_step(ParamStore<double>&, const ParamStore<double>&, ParamStore<double>&, double,
                            const OptimConfig&);

// ---- checkpoint ----

namespace {

constexpr char kMagic[8] = {'M', 'I', 'X', 'N', 'E', 'T', 'C', 'K'};
constexpr std::uint32_t kCheckpointVersion = 1;

template <typename U>
void put_le(std::ostream& os, U v) {
  unsigned char b[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), sizeof(U));
}

template <typename U>
U get_le(std::istream& is) {
  unsigned char b[sizeof(U)];
  if (!is.read(reinterpret_cast<char*>(b), sizeof(U))) throw DataError("checkpoint is truncated");
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(b[i]) << (8 * i);
  return v;
}

void put_string(std::ostream& os, const std::string& s) {
  put_le<std::uint64_t>(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& is, std::uint64_t limit) {
  const auto n = get_le<std::uint64_t>(is);
  if (n > limit) throw DataError("checkpoint string length is implausible");
  std::string s(n, '\0');
  if (!is.read(s.data(), static_cast<std::streamsize>(n))) throw DataError("checkpoint is truncated");
  return s;
}

void put_store(std::ostream& os, const ParamStore<float>& store) {
  for (const auto& [name, t] : store) {
    put_string(os, name);
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.shape().rank()));
    for (std::size_t d : t.shape().dims()) put_le<std::uint64_t>(os, d);
    for (float v : t.data()) put_le<std::uint32_t>(os, std::bit_cast<std::uint32_t>(v));
  }
}

ParamStore<float> get_store(std::istream& is, const ParamManifest& manifest) {
  ParamStore<float> store;
  for (const auto& spec : manifest.specs()) {
    const std::string name = get_string(is, 4096);
    if (name != spec.name) throw DataError("checkpoint parameter '" + name + "' does not match manifest entry '" + spec.name + "'");
    const auto rank = get_le<std::uint32_t>(is);
    std::vector<std::size_t> dims;
    for (std::uint32_t r = 0; r < rank; ++r) dims.push_back(get_le<std::uint64_t>(is));
    if (!(Shape(dims) == spec.shape)) throw DataError("checkpoint shape mismatch for " + name);
    Tensor t(spec.shape);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = std::bit_cast<float>(get_le<std::uint32_t>(is));
    store.insert(name, std::move(t));
  }
  return store;
}

}  // namespace

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write checkpoint " + path.string());
  const Json header = {{"net", to_json(ck.net)},
                       {"optim", to_json(ck.optim)},
                       {"plane", ck.plane},
                       {"seed", ck.seed},
                       {"epoch", ck.epoch},
                       {"manifest_entries", ck.params.size()}};
  os.write(kMagic, sizeof(kMagic));
  put_le<std::uint32_t>(os, kCheckpointVersion);
  put_string(os, header.dump());
  put_le<std::uint64_t>(os, ck.params.size());
  put_store(os, ck.params);
  put_store(os, ck.velocity);
  if (!os) throw DataError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint " + path.string());
  char magic[sizeof(kMagic)];
  if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw DataError(path.string() + " is not a checkpoint");
  const auto version = get_le<std::uint32_t>(is);
  if (version != kCheckpointVersion) throw DataError("unsupported checkpoint version " + std::to_string(version));
  Checkpoint ck;
  try {
    const Json h = Json::parse(get_string(is, 1u << 24));
    ck.net = net_config_from_json(h.at("net"), NetConfig{});
    ck.optim = optim_config_from_json(h.at("optim"), OptimConfig{});
    ck.plane = h.at("plane").get<std::string>();
    ck.seed = h.at("seed").get<std::uint64_t>();
    ck.epoch = h.at("epoch").get<std::size_t>();
  } catch (const Json::exception& e) {
    throw DataError(std::string("bad checkpoint header: ") + e.what());
  } catch (const ConfigError& e) {
    throw DataError(std::string("bad checkpoint header: ") + e.what());
  }
  const MixNet net(ck.net);
  const auto count = get_le<std::uint64_t>(is);
  if (count != net.manifest().size()) throw DataError("checkpoint parameter count does not match its network config");
  ck.params = get_store(is, net.manifest());
  ck.velocity = get_store(is, net.manifest());
  return ck;
}

// ---- logging ----

std::string csv_header(std::size_t n_classes) {
  std::string h = "epoch,lr,train_loss,val_loss";
  for (std::size_t c = 1; c < n_classes; ++c) h += ",dice_" + std::to_string(c);
  return h;
}

std::string csv_row(const EpochLog& log) {
  std::ostringstream os;
  os << std::setprecision(9) << log.epoch << ',' << log.lr << ',' << log.train_loss << ',';
  if (log.val_loss) os << *log.val_loss;
  for (double d : log.dice) os << ',' << d;
  return os.str();
}

// ---- batching and inference ----

Tensor stack_images(const std::vector<const Sample*>& batch) {
  if (batch.empty()) throw ShapeError("empty batch");
  const Shape& s = batch.front()->image.shape();
  Tensor out(Shape{batch.size(), s[0], s[1], s[2]});
  for (std::size_t n = 0; n < batch.size(); ++n) {
    if (!(batch[n]->image.shape() == s)) throw ShapeError("batch samples differ in shape");
    std::copy(batch[n]->image.data().begin(), batch[n]->image.data().end(), out.data().begin() + n * s.numel());
  }
  return out;
}

std::vector<std::uint8_t> stack_labels(const std::vector<const Sample*>& batch) {
  std::vector<std::uint8_t> out;
  for (const Sample* s : batch) {
    if (s->label.height != s->height() || s->label.width != s->width()) throw ShapeError("label map does not match image");
    out.insert(out.end(), s->label.data.begin(), s->label.data.end());
  }
  return out;
}

namespace {

// Consecutive runs of equally shaped samples, at most `batch_size` long.
std::vector<std::vector<const Sample*>> batches_in_order(const std::vector<Sample>& samples, std::size_t batch_size) {
  std::vector<std::vector<const Sample*>> out;
  for (const Sample& s : samples) {
    if (out.empty() || out.back().size() == batch_size || !(out.back().front()->image.shape() == s.image.shape()))
      out.emplace_back();
    out.back().push_back(&s);
  }
  return out;
}

}  // namespace

std::vector<Tensor> predict_probabilities(const MixNet& net, const ParamStore<float>& params,
                                          const std::vector<Sample>& samples, std::size_t batch_size) {
  const std::size_t K = net.config().n_classes;
  std::vector<Tensor> out;
  out.reserve(samples.size());
  for (const auto& batch : batches_in_order(samples, std::max<std::size_t>(batch_size, 1))) {
    Graph<float> g(false);
    const ParamVars pv = bind_params(g, params);
    const Var logits = net.forward(g, pv, g.constant(stack_images(batch)));
    const Tensor probs = softmax(g.value(logits));
    const std::size_t per = batch.front()->height() * batch.front()->width() * K;
    for (std::size_t n = 0; n < batch.size(); ++n) {
      Tensor t(Shape{batch.front()->height(), batch.front()->width(), K});
      std::copy(probs.data().begin() + n * per, probs.data().begin() + (n + 1) * per, t.data().begin());
      out.push_back(std::move(t));
    }
  }
  return out;
}

std::vector<double> slice_dice(const std::vector<Tensor>& probabilities, const std::vector<Sample>& samples,
                               std::size_t n_classes) {
  if (probabilities.size() != samples.size()) throw ShapeError("one probability map per sample expected");
  std::vector<std::size_t> pred(n_classes, 0), truth(n_classes, 0), both(n_classes, 0);
  for (std::size_t s = 0; s < samples.size(); ++s) {
    const Tensor& p = probabilities[s];
    const auto& lab = samples[s].label.data;
    if (p.size() != lab.size() * n_classes) throw ShapeError("probability map does not match label map");
    for (std::size_t i = 0; i < lab.size(); ++i) {
      std::size_t best = 0;
      for (std::size_t k = 1; k < n_classes; ++k)
        if (p[i * n_classes + k] > p[i * n_classes + best]) best = k;
      ++pred[best];
      ++truth[lab[i]];
      if (best == lab[i]) ++both[best];
    }
  }
  std::vector<double> out;
  for (std::size_t k = 1; k < n_classes; ++k)
    out.push_back(pred[k] + truth[k] == 0 ? 1.0 : 2.0 * static_cast<double>(both[k]) / static_cast<double>(pred[k] + truth[k]));
  return out;
}

// ---- trainer ----

namespace {

ParamStore<float> zeros_like(const ParamStore<float>& s) {
  ParamStore<float> out;
  for (const auto& [name, t] : s) out.insert(name, Tensor(t.shape()));
  return out;
}

}  // namespace

Trainer::Trainer(const MixNet& net, OptimConfig cfg, std::uint64_t seed)
    : net_(&net), cfg_(std::move(cfg)), seed_(seed), params_(net.init_params(seed)) {
  cfg_.validate();
  velocity_ = zeros_like(params_);
}

Trainer::Trainer(const MixNet& net, const Checkpoint& ck)
    : net_(&net), cfg_(ck.optim), seed_(ck.seed), epoch_(ck.epoch), params_(ck.params), velocity_(ck.velocity) {
  cfg_.validate();
  if (!(MixNet(ck.net).manifest() == net.manifest())) throw ConfigError("checkpoint was written for a different network");
}

double Trainer::step(const std::vector<const Sample*>& batch, double lr) {
  Graph<float> g;
  const ParamVars pv = bind_params(g, params_);
  const Var logits = net_->forward(g, pv, g.constant(stack_images(batch)));
  const std::vector<std::uint8_t> labels = stack_labels(batch);
  const Var loss = softmax_cross_entropy(g, logits, labels, cfg_.loss_reduction);
  g.backward(loss);
  ParamStore<float> grads;
  for (const auto& [name, t] : params_) grads.insert(name, g.grad(pv.at(name)));
  nesterov_step(params_, grads, velocity_, lr, cfg_);
  return static_cast<double>(g.value(loss)[0]);
}

EpochLog Trainer::run_epoch(const aug::ExpandedView& train, const std::vector<Sample>* validation) {
  if (train.size() == 0) throw DataError("training set is empty");
  EpochLog log;
  log.epoch = epoch_;
  log.lr = lr_schedule(epoch_, cfg_);

  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::mt19937_64 rng(derive_seed(seed_, epoch_, 1));
  std::shuffle(order.begin(), order.end(), rng);
  if (cfg_.max_samples_per_epoch > 0 && order.size() > cfg_.max_samples_per_epoch)
    order.resize(cfg_.max_samples_per_epoch);

  double loss_sum = 0.0;
  std::size_t steps = 0;
  std::vector<Sample> batch;
  auto flush = [&] {
    if (batch.empty()) return;
    std::vector<const Sample*> ptrs;
    for (const Sample& s : batch) ptrs.push_back(&s);
    loss_sum += step(ptrs, log.lr);
    ++steps;
    batch.clear();
  };
  for (std::size_t idx : order) {
    const Shape& shape = train.original(idx).image.shape();
    if (!batch.empty() && !(batch.front().image.shape() == shape)) flush();
    batch.push_back(train.at(idx));
    if (batch.size() == cfg_.batch_size) flush();
  }
  flush();
  log.train_loss = loss_sum / static_cast<double>(steps);

  if (validation && !validation->empty()) {
    auto [loss, dice] = validate(*validation);
    log.val_loss = loss;
    log.dice = std::move(dice);
  }
  ++epoch_;
  return log;
}

std::pair<double, std::vector<double>> Trainer::validate(const std::vector<Sample>& samples) const {
  const std::size_t K = net_->config().n_classes;
  double total = 0.0;
  std::vector<Tensor> probs;
  probs.reserve(samples.size());
  for (const auto& batch : batches_in_order(samples, cfg_.batch_size)) {
    Graph<float> g(false);
    const ParamVars pv = bind_params(g, params_);
    const Var logits = net_->forward(g, pv, g.constant(stack_images(batch)));
    const Var loss = softmax_cross_entropy(g, logits, stack_labels(batch), Reduction::kSum);
    total += static_cast<double>(g.value(loss)[0]);
    const Tensor p = softmax(g.value(logits));
    const std::size_t per = batch.front()->height() * batch.front()->width() * K;
    for (std::size_t n = 0; n < batch.size(); ++n) {
      Tensor t(Shape{batch.front()->height(), batch.front()->width(), K});
      std::copy(p.data().begin() + n * per, p.data().begin() + (n + 1) * per, t.data().begin());
      probs.push_back(std::move(t));
    }
  }
  return {total / static_cast<double>(samples.size()), slice_dice(probs, samples, K)};
}

Checkpoint Trainer::checkpoint(const std::string& plane) const {
  Checkpoint ck;
  ck.net = net_->config();
  ck.optim = cfg_;
  ck.plane = plane;
  ck.seed = seed_;
  ck.epoch = epoch_;
  ck.params = params_;
  ck.velocity = velocity_;
  return ck;
}

}  // namespace mixnet
