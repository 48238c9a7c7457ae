#include "magicnet/model.hpp"

namespace magicnet {

void MagicNetConfig::validate() const {
  if (n_mels <= 0 || width <= 0 || expansion <= 0)
    throw ConfigError("model: channel counts must be positive");
  if (prologue_kernel <= 0 || prologue_stride <= 0)
    throw ConfigError("model: prologue kernel/stride must be positive");
  if (gru_layers <= 0 || gru_hidden <= 0)
    throw ConfigError("model: GRU sizes must be positive");
  if (gru_hidden != width)
    throw ConfigError("model: GRU hidden size must match trunk width");
  if (expansion % width != 0)
    throw ConfigError("model: expansion must be a multiple of the trunk width");
  for (size_t i = 0; i < blocks.size(); ++i) {
    const BlockSpec& b = blocks[i];
    if (b.kernel <= 0 || b.stride <= 0)
      throw ConfigError("model: block " + std::to_string(i + 1) + " kernel/stride must be positive");
    if (b.residual && b.stride != 1)
      throw ConfigError("model: block " + std::to_string(i + 1) +
                        " cannot have a residual skip with stride " + std::to_string(b.stride));
  }
}

std::vector<ConvStage> conv_stages(const MagicNetConfig& c) {
  c.validate();
  std::vector<ConvStage> stages;
  stages.push_back({"prologue.dw",
                    {c.n_mels, c.n_mels, c.prologue_kernel, c.prologue_stride, c.n_mels},
                    true});
  stages.push_back({"prologue.pw1", {c.n_mels, c.width, 1, 1, 1}, true});
  stages.push_back({"prologue.pw2", {c.width, c.width, 1, 1, 1}, true});
  for (size_t i = 0; i < c.blocks.size(); ++i) {
    const BlockSpec& b = c.blocks[i];
    const std::string p = "block" + std::to_string(i + 1);
    ConvStage expand{p + ".expand", {c.width, c.expansion, 1, 1, 1}, true};
    expand.save_residual = b.residual;
    stages.push_back(expand);
    stages.push_back(
        {p + ".dw", {c.expansion, c.expansion, b.kernel, b.stride, c.expansion}, true});
    ConvStage project{p + ".project", {c.expansion, c.width, 1, 1, 1}, false};
    project.add_residual = b.residual;
    stages.push_back(project);
  }
  return stages;
}

std::vector<TensorInfo> tensor_schema(const MagicNetConfig& c) {
  std::vector<TensorInfo> schema;
  for (const ConvStage& st : conv_stages(c)) {
    const uint32_t out = static_cast<uint32_t>(st.spec.out_channels);
    const uint32_t ipg = static_cast<uint32_t>(st.spec.in_channels / st.spec.groups);
    const uint32_t k = static_cast<uint32_t>(st.spec.kernel);
    schema.push_back({st.name + ".w", {out, ipg, k}, true});
    schema.push_back({st.name + ".b", {out}, true});
    schema.push_back({st.name + ".bn.gamma", {out}, true});
    schema.push_back({st.name + ".bn.beta", {out}, true});
    schema.push_back({st.name + ".bn.running_mean", {out}, false});
    schema.push_back({st.name + ".bn.running_var", {out}, false});
  }
  const uint32_t h = static_cast<uint32_t>(c.gru_hidden);
  const uint32_t h3 = 3 * h;
  for (int l = 0; l < c.gru_layers; ++l) {
    const std::string p = "gru.l" + std::to_string(l) + ".";
    const uint32_t in = l == 0 ? static_cast<uint32_t>(c.width) : h;
    schema.push_back({p + "w_ih", {h3, in}, true});
    schema.push_back({p + "w_hh", {h3, h}, true});
    schema.push_back({p + "b_ih", {h3}, true});
    schema.push_back({p + "b_hh", {h3}, true});
  }
  schema.push_back({"fc.w", {1, static_cast<uint32_t>(c.gru_hidden)}, true});
  schema.push_back({"fc.b", {1}, true});
  schema.push_back({"feat.mean", {static_cast<uint32_t>(c.n_mels)}, false});
  schema.push_back({"feat.std", {static_cast<uint32_t>(c.n_mels)}, false});
  return schema;
}

namespace {

// "block1.dw.bn.gamma" -> "block1.dw"; "gru.l0.w_ih" -> "gru.l0";
// "fc.w" -> "fc"; "feat.mean" -> "feat".
std::string layer_of(const std::string& tensor_name) {
  std::string s = tensor_name;
  const size_t dot = s.rfind('.');
  if (dot != std::string::npos) s.resize(dot);
  if (s.size() >= 3 && s.compare(s.size() - 3, 3, ".bn") == 0) s.resize(s.size() - 3);
  return s;
}

}  // namespace

ParamCounts param_counts(const MagicNetConfig& c) {
  ParamCounts out;
  for (const TensorInfo& info : tensor_schema(c)) {
    const std::string layer = layer_of(info.name);
    if (out.rows.empty() || out.rows.back().layer != layer) out.rows.push_back({layer, 0, 0});
    int64_t n = 1;
    for (uint32_t d : info.dims) n *= d;
    out.rows.back().total += n;
    out.total += n;
    if (info.trainable) {
      out.rows.back().trainable += n;
      out.trainable += n;
    }
  }
  return out;
}

ReceptiveField receptive_field(const MagicNetConfig& c) {
  ReceptiveField rf;
  rf.frames = 1;
  rf.downsample = 1;
  for (const ConvStage& st : conv_stages(c)) {
    rf.frames += static_cast<int64_t>(st.spec.kernel - 1) * rf.downsample;
    rf.downsample *= st.spec.stride;
  }
  rf.recurrent_unbounded = true;
  return rf;
}

int64_t model_out_time(const MagicNetConfig& c, int64_t t) {
  for (const ConvStage& st : conv_stages(c)) t = st.spec.out_time(t);
  return t;
}

}  // namespace magicnet
