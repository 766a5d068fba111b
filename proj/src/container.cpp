#include "streamline/container.hpp"

#include <bit>
#include <cstring>
#include <set>

#include "streamline/io.hpp"

namespace streamline {

static_assert(std::endian::native == std::endian::little, "container I/O assumes a little-endian host");

namespace {

using Kind = FormatError::Kind;

json replacement_descriptor(std::size_t pos, const ReplacementNet& net) {
    json names = json::array();
    for (const auto& [name, t] : net.params) names.push_back(name);
    return json{{"position", pos},
                {"kind", std::string(to_string(net.kind))},
                {"d_model", net.d_model},
                {"d_inner", net.d_inner},
                {"residual", net.residual},
                {"init_strategy", std::string(to_string(net.init))},
                {"params", names}};
}

} // namespace

void save_model(const TransformerModel& model, const std::filesystem::path& dir) {
    model.validate();
    std::vector<unsigned char> blob;
    json tensors = json::object();
    for (const auto& [name, t] : named_tensors(model)) {
        const std::size_t len = t->size() * sizeof(float);
        const std::size_t offset = blob.size();
        blob.resize(offset + len);
        std::memcpy(blob.data() + offset, t->data().data(), len);
        tensors[name] = json{{"dtype", "f32"},
                             {"shape", t->shape()},
                             {"byte_offset", offset},
                             {"byte_len", len},
                             {"crc32", crc32_of(t->data())}};
    }
    json replacements = json::array();
    for (const auto& [pos, net] : model.replacement_slots) replacements.push_back(replacement_descriptor(pos, net));

    json manifest{{"format_version", kContainerFormatVersion},
                  {"config", config_to_json(model.config)},
                  {"layer_labels", model.layer_labels},
                  {"replacements", replacements},
                  {"tensors", tensors},
                  {"blob_bytes", blob.size()},
                  {"blob_crc32", crc32_of(blob)}};
    std::filesystem::create_directories(dir);
    write_file(dir / "weights.bin", blob);
    write_text(dir / "manifest.json", dump_json(manifest));
}

TransformerModel load_model(const std::filesystem::path& dir) {
    const json manifest = read_json(dir / "manifest.json");
    const std::vector<unsigned char> blob = read_file(dir / "weights.bin");

    TransformerModel model;
    json table;
    try {
        if (manifest.at("format_version").get<int>() != kContainerFormatVersion) {
            throw FormatError(Kind::Manifest, "unsupported container format_version " +
                                                  manifest.at("format_version").dump());
        }
        model.config = config_from_json(manifest.at("config"));
        model.layer_labels = manifest.at("layer_labels").get<std::vector<int>>();
        table = manifest.at("tensors");
        if (manifest.at("blob_bytes").get<std::size_t>() != blob.size() ||
            manifest.at("blob_crc32").get<std::uint32_t>() != crc32_of(blob)) {
            throw FormatError(Kind::Checksum, dir.string() + ": weights.bin checksum failure (expected " +
                                                  manifest.at("blob_bytes").dump() + " bytes, found " +
                                                  std::to_string(blob.size()) + ")");
        }
        for (const json& r : manifest.at("replacements")) {
            ReplacementNet net;
            net.kind = parse_replacement_kind(r.at("kind").get<std::string>());
            net.d_model = r.at("d_model").get<std::size_t>();
            net.d_inner = r.at("d_inner").get<std::size_t>();
            net.residual = r.at("residual").get<bool>();
            net.init = parse_init_strategy(r.at("init_strategy").get<std::string>());
            for (const json& name : r.at("params")) net.params.emplace(name.get<std::string>(), Tensor());
            model.replacement_slots.emplace(r.at("position").get<std::size_t>(), std::move(net));
        }
    } catch (const json::exception& e) {
        throw FormatError(Kind::Manifest, dir.string() + ": malformed manifest: " + e.what());
    } catch (const ConfigError& e) {
        throw FormatError(Kind::Manifest, dir.string() + ": malformed manifest: " + e.what());
    }
    try {
        model.config.validate();
    } catch (const ConfigError& e) {
        throw FormatError(Kind::Manifest, dir.string() + ": invalid config: " + e.what());
    }
    model.layers.resize(model.config.n_layers);

    std::set<std::string> expected;
    for (auto& [name, t] : named_tensors(model)) {
        expected.insert(name);
        if (!table.contains(name)) throw FormatError(Kind::Manifest, "tensor '" + name + "' missing from manifest");
        const json& e = table.at(name);
        try {
            if (e.at("dtype").get<std::string>() != "f32") {
                throw FormatError(Kind::Manifest, "tensor '" + name + "' has unsupported dtype");
            }
            Shape shape = e.at("shape").get<Shape>();
            const auto offset = e.at("byte_offset").get<std::size_t>();
            const auto len = e.at("byte_len").get<std::size_t>();
            std::size_t count = 1;
            for (std::size_t d : shape) count *= d;
            if (shape.empty() || count == 0 || len != count * sizeof(float) || offset > blob.size() ||
                len > blob.size() - offset) {
                throw FormatError(Kind::BlobMismatch, "tensor '" + name + "' span [" + std::to_string(offset) + ", +" +
                                                          std::to_string(len) + ") does not fit shape " +
                                                          shape_string(shape) + " in a blob of " +
                                                          std::to_string(blob.size()) + " bytes");
            }
            std::vector<float> data(count);
            std::memcpy(data.data(), blob.data() + offset, len);
            if (crc32_of(std::span<const float>(data)) != e.at("crc32").get<std::uint32_t>()) {
                throw FormatError(Kind::Checksum, "tensor '" + name + "' checksum failure");
            }
            *t = Tensor(std::move(shape), std::move(data));
        } catch (const json::exception& ex) {
            throw FormatError(Kind::Manifest, "tensor '" + name + "' entry malformed: " + ex.what());
        }
    }
    for (const auto& [name, entry] : table.items()) {
        if (!expected.count(name)) throw FormatError(Kind::UnknownTensor, "unknown tensor name '" + name + "'");
    }
    try {
        model.validate();
    } catch (const DimensionError& e) {
        throw FormatError(Kind::BlobMismatch, std::string("container shapes inconsistent: ") + e.what());
    } catch (const DataError& e) {
        throw FormatError(Kind::Manifest, std::string("container inconsistent: ") + e.what());
    }
    return model;
}

} // namespace streamline
