// Checkpoint serialization: manifest.json describes the config and tensor
// table; weights.bin holds the raw scalars little-endian, row-major, at the
// manifest offsets. Round-trips are bit-identical on every platform because
// the byte order is written explicitly.

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dam/model.hpp"

namespace dam {
namespace {

using ordered_json = nlohmann::ordered_json;

template <typename S>
const char* scalar_tag();
template <>
const char* scalar_tag<float>() {
    return "float32";
}
template <>
const char* scalar_tag<double>() {
    return "float64";
}

template <typename S>
void append_scalar(std::string& out, S x) {
    using Bits = std::conditional_t<sizeof(S) == 4, std::uint32_t, std::uint64_t>;
    Bits bits = std::bit_cast<Bits>(x);
    for (std::size_t i = 0; i < sizeof(Bits); ++i) {
        out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
    }
}

template <typename S>
S read_scalar(const std::string& buf, std::size_t offset) {
    using Bits = std::conditional_t<sizeof(S) == 4, std::uint32_t, std::uint64_t>;
    Bits bits = 0;
    for (std::size_t i = 0; i < sizeof(Bits); ++i) {
        bits |= static_cast<Bits>(static_cast<unsigned char>(buf[offset + i])) << (8 * i);
    }
    return std::bit_cast<S>(bits);
}

std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw user_error("cannot open " + p.string());
    std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return data;
}

void write_file(const std::filesystem::path& p, const std::string& data) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw user_error("cannot write " + p.string());
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
    if (!out) throw user_error("short write to " + p.string());
}

}  // namespace

template <typename S>
void save_checkpoint(const DamModel<S>& model, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);

    std::string payload;
    ordered_json tensors = ordered_json::array();
    for (std::size_t i = 0; i < model.tensor_count(); ++i) {
        const Matrix<S>& t = model.tensor(i);
        ordered_json entry;
        entry["name"] = model.tensor_name(i);
        entry["rows"] = t.rows();
        entry["cols"] = t.cols();
        entry["offset"] = payload.size();
        tensors.push_back(std::move(entry));
        for (Eigen::Index r = 0; r < t.rows(); ++r) {
            for (Eigen::Index c = 0; c < t.cols(); ++c) append_scalar(payload, t(r, c));
        }
    }

    const ModelConfig& cfg = model.config();
    ordered_json manifest;
    manifest["format"] = "dam-checkpoint-v1";
    manifest["scalar"] = scalar_tag<S>();
    manifest["frequency_set"] = BasisSpec::version();
    manifest["config"] = {{"d_model", cfg.d_model},
                          {"d_ff", cfg.d_ff},
                          {"n_layers", cfg.n_layers},
                          {"n_heads", cfg.n_heads},
                          {"n_tome", cfg.n_tome},
                          {"dropout", cfg.dropout},
                          {"hsr_reference_context", cfg.hsr_reference_context}};
    manifest["tensors"] = std::move(tensors);

    write_file(fs::path(dir) / "weights.bin", payload);
    write_file(fs::path(dir) / "manifest.json", manifest.dump(2) + "\n");
}

template <typename S>
DamModel<S> load_checkpoint(const std::string& dir) {
    namespace fs = std::filesystem;
    const fs::path root(dir);
    ordered_json manifest;
    try {
        manifest = ordered_json::parse(read_file(root / "manifest.json"));
    } catch (const nlohmann::json::exception& e) {
        throw user_error("checkpoint manifest is not valid JSON: " + std::string(e.what()));
    }

    if (manifest.value("format", "") != "dam-checkpoint-v1") {
        throw user_error("unsupported checkpoint format in " + dir);
    }
    if (manifest.value("scalar", "") != scalar_tag<S>()) {
        throw user_error("checkpoint scalar type is " + manifest.value("scalar", "?") +
                         ", expected " + scalar_tag<S>());
    }
    if (manifest.value("frequency_set", "") != BasisSpec::version()) {
        throw user_error("checkpoint frequency set " + manifest.value("frequency_set", "?") +
                         " does not match this build (" + BasisSpec::version() + ")");
    }

    ModelConfig cfg;
    try {
        const auto& jc = manifest.at("config");
        cfg.d_model = jc.at("d_model").get<int>();
        cfg.d_ff = jc.at("d_ff").get<int>();
        cfg.n_layers = jc.at("n_layers").get<int>();
        cfg.n_heads = jc.at("n_heads").get<int>();
        cfg.n_tome = jc.at("n_tome").get<int>();
        cfg.dropout = jc.at("dropout").get<double>();
        cfg.hsr_reference_context = jc.at("hsr_reference_context").get<int>();
    } catch (const nlohmann::json::exception& e) {
        throw user_error("checkpoint config is malformed: " + std::string(e.what()));
    }

    DamModel<S> model(cfg);
    const auto& jt = manifest.at("tensors");
    if (jt.size() != model.tensor_count()) {
        throw user_error("checkpoint tensor count mismatch: manifest has " +
                         std::to_string(jt.size()) + ", model expects " +
                         std::to_string(model.tensor_count()));
    }
    const std::string payload = read_file(root / "weights.bin");
    for (std::size_t i = 0; i < model.tensor_count(); ++i) {
        const auto& e = jt.at(i);
        Matrix<S>& t = model.tensor(i);
        if (e.at("name").template get<std::string>() != model.tensor_name(i) ||
            e.at("rows").template get<Eigen::Index>() != t.rows() ||
            e.at("cols").template get<Eigen::Index>() != t.cols()) {
            throw user_error("checkpoint tensor " + std::to_string(i) +
                             " does not match the model layout (" + model.tensor_name(i) + ")");
        }
        std::size_t off = e.at("offset").template get<std::size_t>();
        const std::size_t need = off + sizeof(S) * static_cast<std::size_t>(t.size());
        if (need > payload.size()) throw user_error("checkpoint weights.bin is truncated");
        for (Eigen::Index r = 0; r < t.rows(); ++r) {
            for (Eigen::Index c = 0; c < t.cols(); ++c) {
                t(r, c) = read_scalar<S>(payload, off);
                off += sizeof(S);
            }
        }
    }
    return model;
}

template void save_checkpoint<float>(const DamModel<float>&, const std::string&);
template void save_checkpoint<double>(const DamModel<double>&, const std::string&);
template DamModel<float> load_checkpoint<float>(const std::string&);
template DamModel<double> load_checkpoint<double>(const std::string&);

}  // namespace dam
