#include "config_json.hpp"

namespace biasdiff::detail {

using nlohmann::json;

json config_to_json(const NetworkConfig& c) {
  return json{{"kind", to_string(c.kind)},
              {"window", c.window},
              {"encoder",
               {{"input_channels", c.encoder.input_channels},
                {"widths", c.encoder.widths},
                {"kernel", c.encoder.kernel},
                {"dilation_base", c.encoder.dilation_base},
                {"feature_dim", c.encoder.feature_dim}}},
              {"denoiser",
               {{"latent_dim", c.denoiser.latent_dim},
                {"fused_dim", c.denoiser.fused_dim},
                {"hidden", c.denoiser.hidden},
                {"cells", c.denoiser.cells},
                {"embed_dim", c.denoiser.embed_dim},
                {"diffusion_steps", c.denoiser.diffusion_steps},
                {"pooled_condition", c.denoiser.pooled_condition},
                {"sequence_latent", c.denoiser.sequence_latent}}}};
}

NetworkConfig config_from_json(const json& j) {
  NetworkConfig c;
  c.kind = model_kind_from_string(j.at("kind").get<std::string>());
  c.window = j.at("window").get<int>();
  const json& e = j.at("encoder");
  c.encoder.input_channels = e.at("input_channels").get<int>();
  c.encoder.widths = e.at("widths").get<std::vector<int>>();
  c.encoder.kernel = e.at("kernel").get<int>();
  c.encoder.dilation_base = e.at("dilation_base").get<int>();
  c.encoder.feature_dim = e.at("feature_dim").get<int>();
  const json& d = j.at("denoiser");
  c.denoiser.latent_dim = d.at("latent_dim").get<int>();
  c.denoiser.fused_dim = d.at("fused_dim").get<int>();
  c.denoiser.hidden = d.at("hidden").get<int>();
  c.denoiser.cells = d.at("cells").get<int>();
  c.denoiser.embed_dim = d.at("embed_dim").get<int>();
  c.denoiser.diffusion_steps = d.at("diffusion_steps").get<int>();
  c.denoiser.pooled_condition = d.at("pooled_condition").get<bool>();
  c.denoiser.sequence_latent = d.at("sequence_latent").get<bool>();
  return c;
}

}  // namespace biasdiff::detail
