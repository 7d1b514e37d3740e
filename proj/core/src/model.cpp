#include "ssigan/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace ssigan {

using ad::Mode;
using ad::Tape;
using ad::Tensor;

namespace {

Tensor weight(const ad::Shape& shape, Rng& rng, double sd = 0.02) {
  Tensor t(shape, true);
  for (std::int64_t i = 0; i < t.size(); ++i) t.data()[i] = rng.normal(0.0, sd);
  return t;
}

Tensor zeros_param(const ad::Shape& shape) { return Tensor(shape, true); }

Tensor ones_param(const ad::Shape& shape) {
  Tensor t(shape, true);
  for (std::int64_t i = 0; i < t.size(); ++i) t.data()[i] = 1.0;
  return t;
}

Tensor dense(Tape* tape, const Tensor& x, const Tensor& w, const Tensor& b) {
  return ad::dense_layer(tape, x, w, b);
}

AttentionWeights make_attention(int embed, int heads, int head_size, Rng& rng) {
  const std::int64_t inner = static_cast<std::int64_t>(heads) * head_size;
  AttentionWeights w;
  w.wq = weight({embed, inner}, rng);
  w.bq = zeros_param({inner});
  w.wk = weight({embed, inner}, rng);
  w.bk = zeros_param({inner});
  w.wv = weight({embed, inner}, rng);
  w.bv = zeros_param({inner});
  w.wo = weight({inner, embed}, rng);
  w.bo = zeros_param({embed});
  return w;
}

SwinBlock make_block(int embed, int heads, int head_size, int ff_dim,
                     Rng& rng) {
  SwinBlock b;
  b.attn = make_attention(embed, heads, head_size, rng);
  b.ln1_gamma = ones_param({embed});
  b.ln1_beta = zeros_param({embed});
  b.ln2_gamma = ones_param({embed});
  b.ln2_beta = zeros_param({embed});
  b.ff_w1 = weight({embed, ff_dim}, rng);
  b.ff_b1 = zeros_param({ff_dim});
  b.ff_w2 = weight({ff_dim, embed}, rng);
  b.ff_b2 = zeros_param({embed});
  return b;
}

void collect_block(const SwinBlock& b, std::vector<Tensor>& out) {
  for (const Tensor& t :
       {b.attn.wq, b.attn.bq, b.attn.wk, b.attn.bk, b.attn.wv, b.attn.bv,
        b.attn.wo, b.attn.bo, b.ln1_gamma, b.ln1_beta, b.ln2_gamma,
        b.ln2_beta, b.ff_w1, b.ff_b1, b.ff_w2, b.ff_b2})
    out.push_back(t);
}

void collect_block_entries(SwinBlock& b, const std::string& prefix,
                           std::vector<StateEntry>& out) {
  auto put = [&](const char* name, Tensor& t) {
    out.push_back({prefix + name, t.shape(), &t.node->values});
  };
  put("attn.wq", b.attn.wq);
  put("attn.bq", b.attn.bq);
  put("attn.wk", b.attn.wk);
  put("attn.bk", b.attn.bk);
  put("attn.wv", b.attn.wv);
  put("attn.bv", b.attn.bv);
  put("attn.wo", b.attn.wo);
  put("attn.bo", b.attn.bo);
  put("ln1.gamma", b.ln1_gamma);
  put("ln1.beta", b.ln1_beta);
  put("ln2.gamma", b.ln2_gamma);
  put("ln2.beta", b.ln2_beta);
  put("ff.w1", b.ff_w1);
  put("ff.b1", b.ff_b1);
  put("ff.w2", b.ff_w2);
  put("ff.b2", b.ff_b2);
}

}  // namespace

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) {
    throw std::invalid_argument("model config: " + msg);
  };
  if (noise_dim < 1) fail("noise_dim < 1");
  if (head_size < 1 || num_heads < 1) fail("head geometry invalid");
  if (ff_dim < 1) fail("ff_dim < 1");
  if (num_blocks < 1) fail("num_blocks < 1");
  if (dropout_rate < 0.0 || dropout_rate >= 1.0) fail("dropout_rate outside [0,1)");
  if (embed_dim < 4 || embed_dim % 4 != 0)
    fail("embed_dim must be a positive multiple of 4");
  if (discriminator_variant == DiscriminatorVariant::kShiftedWindow) {
    if (window_size < 1 || kSequenceLen % window_size != 0)
      fail("sequence length " + std::to_string(kSequenceLen) +
           " not divisible by window_size " + std::to_string(window_size));
    if (shift_size < 0 || shift_size >= window_size)
      fail("shift_size must satisfy 0 <= shift < window_size");
  }
}

std::string ModelConfig::serialize() const {
  std::ostringstream os;
  os << "noise_dim=" << noise_dim << "\n"
     << "head_size=" << head_size << "\n"
     << "num_heads=" << num_heads << "\n"
     << "ff_dim=" << ff_dim << "\n"
     << "num_blocks=" << num_blocks << "\n"
     << "dropout_rate=" << dropout_rate << "\n"
     << "embed_dim=" << embed_dim << "\n"
     << "window_size=" << window_size << "\n"
     << "shift_size=" << shift_size << "\n"
     << "leaky_slope=" << leaky_slope << "\n"
     << "generator_variant="
     << (generator_variant == GeneratorVariant::kTransformer ? "transformer"
                                                             : "conv_only")
     << "\n"
     << "discriminator_variant="
     << (discriminator_variant == DiscriminatorVariant::kShiftedWindow
             ? "shifted_window"
             : "plain_transformer")
     << "\n";
  return os.str();
}

ModelConfig ModelConfig::parse(const std::string& text) {
  ModelConfig c;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos || line.empty() || line[0] == '#') continue;
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    if (key == "noise_dim") c.noise_dim = std::stoi(value);
    else if (key == "head_size") c.head_size = std::stoi(value);
    else if (key == "num_heads") c.num_heads = std::stoi(value);
    else if (key == "ff_dim") c.ff_dim = std::stoi(value);
    else if (key == "num_blocks") c.num_blocks = std::stoi(value);
    else if (key == "dropout_rate") c.dropout_rate = std::stod(value);
    else if (key == "embed_dim") c.embed_dim = std::stoi(value);
    else if (key == "window_size") c.window_size = std::stoi(value);
    else if (key == "shift_size") c.shift_size = std::stoi(value);
    else if (key == "leaky_slope") c.leaky_slope = std::stod(value);
    else if (key == "generator_variant")
      c.generator_variant = value == "conv_only" ? GeneratorVariant::kConvOnly
                                                 : GeneratorVariant::kTransformer;
    else if (key == "discriminator_variant")
      c.discriminator_variant =
          value == "plain_transformer" ? DiscriminatorVariant::kPlainTransformer
                                       : DiscriminatorVariant::kShiftedWindow;
    else
      throw std::invalid_argument("model config: unknown key '" + key + "'");
  }
  return c;
}

void ModelConfig::save(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os << serialize();
}

ModelConfig ModelConfig::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open: " + path);
  std::ostringstream buf;
  buf << is.rdbuf();
  return parse(buf.str());
}

// --------------------------------------------------------------------------

namespace {
constexpr char kCheckpointMagic[8] = {'S', 'S', 'G', 'C', 'K', 'P', 'T', '1'};
}

void save_state(const std::vector<StateEntry>& entries,
                const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os.write(kCheckpointMagic, 8);
  const std::uint32_t version = 1;
  os.write(reinterpret_cast<const char*>(&version), 4);
  const std::uint32_t count = static_cast<std::uint32_t>(entries.size());
  os.write(reinterpret_cast<const char*>(&count), 4);
  for (const StateEntry& e : entries) {
    const std::uint32_t name_len = static_cast<std::uint32_t>(e.name.size());
    os.write(reinterpret_cast<const char*>(&name_len), 4);
    os.write(e.name.data(), name_len);
    const std::uint32_t ndim = static_cast<std::uint32_t>(e.shape.size());
    os.write(reinterpret_cast<const char*>(&ndim), 4);
    for (std::int64_t d : e.shape) {
      const std::uint64_t v = static_cast<std::uint64_t>(d);
      os.write(reinterpret_cast<const char*>(&v), 8);
    }
    os.write(reinterpret_cast<const char*>(e.data->data()),
             static_cast<std::streamsize>(e.data->size() * 8));
  }
  if (!os) throw std::runtime_error("write failed: " + path);
}

void load_state(const std::vector<StateEntry>& entries,
                const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open: " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  std::uint32_t version = 0, count = 0;
  is.read(reinterpret_cast<char*>(&version), 4);
  is.read(reinterpret_cast<char*>(&count), 4);
  if (!is || version != 1)
    throw std::runtime_error("checkpoint: unsupported version");
  if (count != entries.size())
    throw std::runtime_error("checkpoint: entry count mismatch");
  for (const StateEntry& e : entries) {
    std::uint32_t name_len = 0;
    is.read(reinterpret_cast<char*>(&name_len), 4);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    if (!is || name != e.name)
      throw std::runtime_error("checkpoint: expected entry '" + e.name +
                               "', found '" + name + "'");
    std::uint32_t ndim = 0;
    is.read(reinterpret_cast<char*>(&ndim), 4);
    ad::Shape shape(ndim);
    for (std::uint32_t i = 0; i < ndim; ++i) {
      std::uint64_t v = 0;
      is.read(reinterpret_cast<char*>(&v), 8);
      shape[i] = static_cast<std::int64_t>(v);
    }
    if (!is || shape != e.shape)
      throw std::runtime_error("checkpoint: shape mismatch for '" + e.name +
                               "'");
    is.read(reinterpret_cast<char*>(e.data->data()),
            static_cast<std::streamsize>(e.data->size() * 8));
    if (!is)
      throw std::runtime_error("checkpoint: truncated payload at '" + e.name +
                               "'");
  }
}

// --------------------------------------------------------------------------

Tensor window_attention(Tape* tape, const Tensor& x, const AttentionWeights& w,
                        int window_size, int shift, int num_heads,
                        int head_size) {
  if (x.ndim() != 3)
    throw std::invalid_argument("window_attention: expected [B,T,D], got " +
                                ad::shape_to_string(x.shape()));
  const std::int64_t b = x.dim(0), t = x.dim(1), d = x.dim(2);
  if (window_size < 1 || t % window_size != 0)
    throw std::invalid_argument(
        "window_attention: sequence of " + std::to_string(t) +
        " tokens not divisible into windows of " +
        std::to_string(window_size));
  if (shift < 0 || shift >= window_size)
    throw std::invalid_argument("window_attention: shift " +
                                std::to_string(shift) +
                                " outside [0, window_size)");
  (void)b;
  (void)d;
  return ad::multi_head_window_attention(tape, x, w.wq, w.bq, w.wk, w.bk,
                                         w.wv, w.bv, w.wo, w.bo, window_size,
                                         shift, num_heads, head_size);
}

Tensor realfake_probability(Tape* tape, const Tensor& class_logits) {
  return ad::sigmoid(tape, ad::row_logsumexp(tape, class_logits));
}

Tensor SwinBlock::forward(Tape* tape, const Tensor& x,
                          const ModelConfig& config, int window_size,
                          int shift, Mode mode, Rng& dropout_rng) const {
  Tensor a = ad::layer_norm(tape, x, ln1_gamma, ln1_beta);
  a = window_attention(tape, a, attn, window_size, shift, config.num_heads,
                       config.head_size);
  Tensor x1 = ad::add(tape, x, a);

  Tensor f = ad::layer_norm(tape, x1, ln2_gamma, ln2_beta);
  f = ad::dense_layer(tape, f, ff_w1, ff_b1, ad::Activation::kLeakyRelu,
                      config.leaky_slope, config.dropout_rate, mode,
                      &dropout_rng);
  f = dense(tape, f, ff_w2, ff_b2);
  return ad::add(tape, x1, f);
}

// --------------------------------------------------------------------------

namespace {
constexpr std::int64_t kSeedGridH = 25;
constexpr std::int64_t kSeedGridW = 15;
constexpr std::int64_t kGeneratorBlocks = 2;
}

Generator::Generator(const ModelConfig& config, std::uint64_t seed)
    : config_(config) {
  config_.validate();
  Rng rng(seed);
  const std::int64_t embed = config_.embed_dim;
  const std::int64_t tokens = kSeedGridH * kSeedGridW;
  proj_w_ = weight({config_.noise_dim, tokens * embed}, rng);
  proj_b_ = zeros_param({tokens * embed});
  if (config_.generator_variant == GeneratorVariant::kTransformer)
    for (int i = 0; i < kGeneratorBlocks; ++i)
      blocks_.push_back(make_block(config_.embed_dim, config_.num_heads,
                                   config_.head_size, config_.ff_dim, rng));
  const std::int64_t c1 = embed / 2, c2 = embed / 4;
  conv1_kernel_ = weight({embed, 4, 4, c1}, rng);
  conv2_kernel_ = weight({c1, 4, 4, c2}, rng);
  bn1_gamma_ = ones_param({c1});
  bn1_beta_ = zeros_param({c1});
  bn2_gamma_ = ones_param({c2});
  bn2_beta_ = zeros_param({c2});
  bn1_stats_.running_mean.assign(c1, 0.0);
  bn1_stats_.running_var.assign(c1, 1.0);
  bn1_stats_.initialized = true;
  bn2_stats_.running_mean.assign(c2, 0.0);
  bn2_stats_.running_var.assign(c2, 1.0);
  bn2_stats_.initialized = true;
  out_w_ = weight({c2, 1}, rng);
  out_b_ = zeros_param({1});
}

Tensor Generator::forward(Tape* tape, const Tensor& z, Mode mode,
                          Rng& dropout_rng) {
  if (z.ndim() != 2 || z.dim(1) != config_.noise_dim)
    throw std::invalid_argument(
        "generator: expected noise [B," + std::to_string(config_.noise_dim) +
        "], got " + ad::shape_to_string(z.shape()));
  const std::int64_t b = z.dim(0);
  const std::int64_t embed = config_.embed_dim;
  const std::int64_t tokens = kSeedGridH * kSeedGridW;

  Tensor h = dense(tape, z, proj_w_, proj_b_);
  h = ad::reshape(tape, h, {b, tokens, embed});
  for (const SwinBlock& block : blocks_)
    h = block.forward(tape, h, config_, static_cast<int>(tokens), 0, mode,
                      dropout_rng);
  h = ad::reshape(tape, h, {b, kSeedGridH, kSeedGridW, embed});

  h = ad::conv2d_transpose(tape, h, conv1_kernel_, 2);
  h = ad::batch_norm(tape, h, bn1_gamma_, bn1_beta_, bn1_stats_, mode);
  h = ad::leaky_relu(tape, h, config_.leaky_slope);

  h = ad::conv2d_transpose(tape, h, conv2_kernel_, 2);
  h = ad::batch_norm(tape, h, bn2_gamma_, bn2_beta_, bn2_stats_, mode);
  h = ad::leaky_relu(tape, h, config_.leaky_slope);

  h = ad::dense_layer(tape, h, out_w_, out_b_,
                      ad::Activation::kTanh);  // [B,100,60,1]
  return ad::reshape(tape, h, {b, kSequenceLen, kChannelCount});
}

std::vector<Tensor> Generator::parameters() const {
  std::vector<Tensor> out{proj_w_, proj_b_};
  for (const SwinBlock& blk : blocks_) collect_block(blk, out);
  for (const Tensor& t : {conv1_kernel_, bn1_gamma_, bn1_beta_, conv2_kernel_,
                          bn2_gamma_, bn2_beta_, out_w_, out_b_})
    out.push_back(t);
  return out;
}

std::vector<StateEntry> Generator::state_entries() {
  std::vector<StateEntry> out;
  auto put = [&](const char* name, Tensor& t) {
    out.push_back({name, t.shape(), &t.node->values});
  };
  put("g.proj.w", proj_w_);
  put("g.proj.b", proj_b_);
  for (std::size_t i = 0; i < blocks_.size(); ++i)
    collect_block_entries(blocks_[i], "g.block" + std::to_string(i) + ".", out);
  put("g.conv1.kernel", conv1_kernel_);
  put("g.bn1.gamma", bn1_gamma_);
  put("g.bn1.beta", bn1_beta_);
  put("g.conv2.kernel", conv2_kernel_);
  put("g.bn2.gamma", bn2_gamma_);
  put("g.bn2.beta", bn2_beta_);
  put("g.out.w", out_w_);
  put("g.out.b", out_b_);
  const std::int64_t c1 = config_.embed_dim / 2, c2 = config_.embed_dim / 4;
  out.push_back({"g.bn1.running_mean", {c1}, &bn1_stats_.running_mean});
  out.push_back({"g.bn1.running_var", {c1}, &bn1_stats_.running_var});
  out.push_back({"g.bn2.running_mean", {c2}, &bn2_stats_.running_mean});
  out.push_back({"g.bn2.running_var", {c2}, &bn2_stats_.running_var});
  return out;
}

std::int64_t Generator::parameter_count() const {
  std::int64_t n = 0;
  for (const Tensor& t : parameters()) n += t.size();
  return n;
}

// --------------------------------------------------------------------------

Discriminator::Discriminator(const ModelConfig& config, std::uint64_t seed)
    : config_(config) {
  config_.validate();
  Rng rng(seed);
  const std::int64_t embed = config_.embed_dim;
  in_w_ = weight({kChannelCount, embed}, rng);
  in_b_ = zeros_param({embed});
  for (int i = 0; i < config_.num_blocks; ++i)
    blocks_.push_back(make_block(config_.embed_dim, config_.num_heads,
                                 config_.head_size, config_.ff_dim, rng));
  head_w_ = weight({embed, embed}, rng);
  head_b_ = zeros_param({embed});
  out_w_ = weight({embed, 3}, rng);
  out_b_ = zeros_param({3});
}

Tensor Discriminator::forward(Tape* tape, const Tensor& x, Mode mode,
                              Rng& dropout_rng) {
  if (x.ndim() != 3 || x.dim(1) != kSequenceLen || x.dim(2) != kChannelCount)
    throw std::invalid_argument(
        "discriminator: expected [B," + std::to_string(kSequenceLen) + "," +
        std::to_string(kChannelCount) + "], got " +
        ad::shape_to_string(x.shape()));
  Tensor h = dense(tape, x, in_w_, in_b_);
  const bool plain =
      config_.discriminator_variant == DiscriminatorVariant::kPlainTransformer;
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const int window =
        plain ? static_cast<int>(kSequenceLen) : config_.window_size;
    const int shift = (!plain && i % 2 == 1) ? config_.shift_size : 0;
    h = blocks_[i].forward(tape, h, config_, window, shift, mode, dropout_rng);
    if (h.dim(1) != kSequenceLen)
      throw std::logic_error("discriminator: token count changed inside block");
  }
  Tensor g = ad::global_average_pool(tape, h);
  g = ad::dense_layer(tape, g, head_w_, head_b_, ad::Activation::kLeakyRelu,
                      config_.leaky_slope, config_.dropout_rate, mode,
                      &dropout_rng);
  return dense(tape, g, out_w_, out_b_);
}

std::vector<int> Discriminator::predict(const Tensor& x) {
  Rng rng(0);
  Tensor logits = forward(nullptr, x, Mode::kInference, rng);
  const std::int64_t b = logits.dim(0);
  std::vector<int> out(b);
  for (std::int64_t i = 0; i < b; ++i) {
    const double* row = logits.data() + i * 3;
    int best = 0;
    for (int c = 1; c < 3; ++c)
      if (row[c] > row[best]) best = c;
    out[i] = best;
  }
  return out;
}

std::vector<Tensor> Discriminator::parameters() const {
  std::vector<Tensor> out{in_w_, in_b_};
  for (const SwinBlock& blk : blocks_) collect_block(blk, out);
  for (const Tensor& t : {head_w_, head_b_, out_w_, out_b_}) out.push_back(t);
  return out;
}

std::vector<StateEntry> Discriminator::state_entries() {
  std::vector<StateEntry> out;
  auto put = [&](const char* name, Tensor& t) {
    out.push_back({name, t.shape(), &t.node->values});
  };
  put("d.in.w", in_w_);
  put("d.in.b", in_b_);
  for (std::size_t i = 0; i < blocks_.size(); ++i)
    collect_block_entries(blocks_[i], "d.block" + std::to_string(i) + ".", out);
  put("d.head.w", head_w_);
  put("d.head.b", head_b_);
  put("d.out.w", out_w_);
  put("d.out.b", out_b_);
  return out;
}

std::int64_t Discriminator::parameter_count() const {
  std::int64_t n = 0;
  for (const Tensor& t : parameters()) n += t.size();
  return n;
}

}  // namespace ssigan
