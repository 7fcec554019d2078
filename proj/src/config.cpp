#include "comma/config.hpp"

#include <fstream>
#include <sstream>

namespace comma {

namespace {

std::vector<std::int64_t> parse_int_list(const std::string& v, std::size_t expect,
                                         const std::string& key) {
    std::vector<std::int64_t> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(std::stoll(item));
    check(out.size() == expect,
          strcat_msg("config: ", key, " expects ", expect, " comma-separated values, got '", v,
                     "'"));
    return out;
}

bool parse_bool(const std::string& v, const std::string& key) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    fail(strcat_msg("config: ", key, " expects a boolean, got '", v, "'"));
}

std::string trim(const std::string& s) {
    auto b = s.find_first_not_of(" \t\r");
    auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? "" : s.substr(b, e - b + 1);
}

}  // namespace

void apply_config_entry(CommaConfig& cfg, const std::string& key, const std::string& value) {
    auto ints3 = [&](std::array<std::int64_t, 3>& dst) {
        auto v = parse_int_list(value, 3, key);
        dst = {v[0], v[1], v[2]};
    };
    if (key == "preset") {
        if (value == "paper") cfg = paper_config();
        else if (value == "desk") cfg = desk_config();
        else if (value == "tiny") cfg = tiny_config();
        else fail(strcat_msg("config: unknown preset '", value, "'"));
    } else if (key == "patch_shape") {
        ints3(cfg.patch_shape);
    } else if (key == "global_resize") {
        ints3(cfg.global_resize);
    } else if (key == "base_channels") {
        cfg.base_channels = std::stoll(value);
    } else if (key == "stage_channels") {
        auto v = parse_int_list(value, 4, key);
        cfg.stage_channels = {v[0], v[1], v[2], v[3]};
    } else if (key == "stem_channels") {
        auto v = parse_int_list(value, 2, key);
        cfg.stem_channels = {v[0], v[1]};
    } else if (key == "cam.local_token_sizes") {
        cfg.cam.stage_local_token_sizes = parse_int_list(value, 4, key);
    } else if (key == "cam.global_token_size") {
        cfg.cam.global_token_size = std::stoll(value);
    } else if (key == "cam.attention_dim") {
        cfg.cam.attention_dim = std::stoll(value);
    } else if (key == "cam.mask_conv_kernel") {
        cfg.cam.mask_conv_kernel = std::stoll(value);
    } else if (key == "cam.channel_bottleneck") {
        cfg.cam.channel_bottleneck = std::stoll(value);
    } else if (key == "cam.lfe_softmax") {
        cfg.cam.lfe_softmax = parse_bool(value, key);
    } else if (key == "cam.bounded_channel_mask") {
        cfg.cam.bounded_channel_mask = parse_bool(value, key);
    } else if (key == "cam.literal_coords") {
        cfg.cam.literal_coords = parse_bool(value, key);
    } else if (key == "ccmamba.token_size") {
        cfg.ccmamba.token_size = std::stoll(value);
    } else if (key == "ccmamba.compressed_dim") {
        cfg.ccmamba.compressed_dim = std::stoll(value);
    } else if (key == "ccmamba.expand") {
        cfg.ccmamba.expand = std::stoll(value);
    } else if (key == "ccmamba.conv_width") {
        cfg.ccmamba.conv_width = std::stoll(value);
    } else if (key == "ccmamba.layers") {
        cfg.ccmamba.layers = std::stoll(value);
    } else if (key == "ccmamba.state_dim") {
        cfg.ccmamba.state_dim = std::stoll(value);
    } else if (key == "lambda") {
        cfg.lambda_global = std::stod(value);
    } else if (key == "iterations") {
        cfg.iterations = std::stoll(value);
    } else if (key == "batch_size") {
        cfg.batch_size = std::stoll(value);
    } else if (key == "lr") {
        cfg.lr = std::stod(value);
    } else if (key == "momentum") {
        cfg.momentum = std::stod(value);
    } else if (key == "dice_eps") {
        cfg.dice_eps = std::stod(value);
    } else if (key == "infer_overlap") {
        cfg.infer_overlap = std::stod(value);
    } else if (key == "fg_patch_fraction") {
        cfg.fg_patch_fraction = std::stod(value);
    } else if (key == "seed") {
        cfg.seed = static_cast<std::uint64_t>(std::stoull(value));
    } else if (key == "val_interval") {
        cfg.val_interval = std::stoll(value);
    } else if (key == "checkpoint_interval") {
        cfg.checkpoint_interval = std::stoll(value);
    } else if (key == "ablate.lfe") {
        cfg.ablate.lfe = parse_bool(value, key);
    } else if (key == "ablate.glf") {
        cfg.ablate.glf = parse_bool(value, key);
    } else if (key == "ablate.global_loss") {
        cfg.ablate.global_loss = parse_bool(value, key);
    } else if (key == "ablate.randomize_coords") {
        cfg.ablate.randomize_coords = parse_bool(value, key);
    } else {
        fail(strcat_msg("config: unknown key '", key, "'"));
    }
}

CommaConfig parse_config_text(const std::string& text) {
    CommaConfig cfg;
    std::stringstream ss(text);
    std::string line;
    std::int64_t lineno = 0;
    while (std::getline(ss, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        check(eq != std::string::npos, strcat_msg("config: line ", lineno, " has no '='"));
        apply_config_entry(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return cfg;
}

CommaConfig load_config_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error(strcat_msg("cannot open config: ", path));
    std::stringstream buf;
    buf << is.rdbuf();
    return parse_config_text(buf.str());
}

std::string config_to_text(const CommaConfig& cfg) {
    std::ostringstream os;
    os << "patch_shape=" << cfg.patch_shape[0] << ',' << cfg.patch_shape[1] << ','
       << cfg.patch_shape[2] << '\n';
    os << "global_resize=" << cfg.global_resize[0] << ',' << cfg.global_resize[1] << ','
       << cfg.global_resize[2] << '\n';
    os << "base_channels=" << cfg.base_channels << '\n';
    os << "stage_channels=" << cfg.stage_channels[0] << ',' << cfg.stage_channels[1] << ','
       << cfg.stage_channels[2] << ',' << cfg.stage_channels[3] << '\n';
    os << "stem_channels=" << cfg.stem_channels[0] << ',' << cfg.stem_channels[1] << '\n';
    os << "cam.local_token_sizes=" << cfg.cam.stage_local_token_sizes[0] << ','
       << cfg.cam.stage_local_token_sizes[1] << ',' << cfg.cam.stage_local_token_sizes[2] << ','
       << cfg.cam.stage_local_token_sizes[3] << '\n';
    os << "cam.global_token_size=" << cfg.cam.global_token_size << '\n';
    os << "cam.attention_dim=" << cfg.cam.attention_dim << '\n';
    os << "cam.mask_conv_kernel=" << cfg.cam.mask_conv_kernel << '\n';
    os << "cam.lfe_softmax=" << (cfg.cam.lfe_softmax ? "true" : "false") << '\n';
    os << "cam.bounded_channel_mask=" << (cfg.cam.bounded_channel_mask ? "true" : "false")
       << '\n';
    os << "cam.literal_coords=" << (cfg.cam.literal_coords ? "true" : "false") << '\n';
    os << "ccmamba.token_size=" << cfg.ccmamba.token_size << '\n';
    os << "ccmamba.compressed_dim=" << cfg.ccmamba.compressed_dim << '\n';
    os << "ccmamba.expand=" << cfg.ccmamba.expand << '\n';
    os << "ccmamba.conv_width=" << cfg.ccmamba.conv_width << '\n';
    os << "ccmamba.layers=" << cfg.ccmamba.layers << '\n';
    os << "ccmamba.state_dim=" << cfg.ccmamba.state_dim << '\n';
    os << "lambda=" << cfg.lambda_global << '\n';
    os << "iterations=" << cfg.iterations << '\n';
    os << "batch_size=" << cfg.batch_size << '\n';
    os << "lr=" << cfg.lr << '\n';
    os << "momentum=" << cfg.momentum << '\n';
    os << "seed=" << cfg.seed << '\n';
    os << "ablate.lfe=" << (cfg.ablate.lfe ? "true" : "false") << '\n';
    os << "ablate.glf=" << (cfg.ablate.glf ? "true" : "false") << '\n';
    os << "ablate.global_loss=" << (cfg.ablate.global_loss ? "true" : "false") << '\n';
    os << "ablate.randomize_coords=" << (cfg.ablate.randomize_coords ? "true" : "false") << '\n';
    return os.str();
}

}  // namespace comma
