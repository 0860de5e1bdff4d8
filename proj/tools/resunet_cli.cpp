#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "resunet/app/commands.hpp"

namespace {

using resunet::app::Command;
using resunet::app::KeyValues;

struct Subcommand {
    Command command;
    CLI::App* app = nullptr;
    std::map<std::string, std::string> values;
    std::string config_path;
    std::vector<std::string> positional;
    bool inject_fault = false;
};

void add_fields(Subcommand& sub) {
    for (const auto& field : resunet::app::config_fields()) {
        if (!(field.commands & sub.command)) continue;
        sub.app->add_option("--" + field.key, sub.values[field.key], field.help);
    }
    sub.app->add_option("--config", sub.config_path, "key = value settings file; flags override it");
}

KeyValues given_flags(const Subcommand& sub) {
    KeyValues flags;
    for (const auto& [key, value] : sub.values) {
        if (sub.app->count("--" + key) > 0) flags[key] = value;
    }
    if (!sub.positional.empty()) {
        std::string joined = flags.count("inputs") ? flags["inputs"] : "";
        for (const auto& p : sub.positional) joined += (joined.empty() ? "" : ",") + p;
        flags["inputs"] = joined;
    }
    return flags;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"ResUnet road segmentation: train, predict, evaluate, verify"};
    app.require_subcommand(1);

    std::vector<Subcommand> subs{{resunet::app::kTrain},
                                 {resunet::app::kPredict},
                                 {resunet::app::kEvaluate},
                                 {resunet::app::kVerify}};
    const std::map<Command, std::string> descriptions{
        {resunet::app::kTrain, "train a model on a manifest or on generated scenes"},
        {resunet::app::kPredict, "segment full-size images with overlapping tiles"},
        {resunet::app::kEvaluate, "relaxed precision/recall curve and break-even point"},
        {resunet::app::kVerify, "gradient checks and architecture audit"},
    };
    for (auto& sub : subs) {
        sub.app = app.add_subcommand(resunet::app::command_name(sub.command), descriptions.at(sub.command));
        add_fields(sub);
    }
    subs[1].app->add_option("images", subs[1].positional, "input PNG files");
    subs[3].app->add_flag("--inject-fault", subs[3].inject_fault)->group("");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : resunet::app::kBadInput;
    }

    for (auto& sub : subs) {
        if (!sub.app->parsed()) continue;
        KeyValues file;
        try {
            if (!sub.config_path.empty()) file = resunet::app::read_config_file(sub.config_path);
        } catch (const resunet::app::ConfigError& e) {
            std::cerr << "invalid setting " << e.what() << '\n';
            return resunet::app::kBadInput;
        }
        return resunet::app::run_command(sub.command, file, given_flags(sub), {std::cout, std::cerr},
                                         {sub.inject_fault});
    }
    return resunet::app::kBadInput;
}
