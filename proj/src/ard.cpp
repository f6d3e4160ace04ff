#include "unibrain/ard.hpp"

#include <algorithm>
#include <cctype>

namespace ub {

namespace {

bool word_char(char c) { return std::isalnum((unsigned char)c) != 0; }

bool on_word_boundary(const std::string& text, std::size_t begin, std::size_t end) {
  if (begin > 0 && word_char(text[begin - 1]) && word_char(text[begin])) return false;
  if (end < text.size() && word_char(text[end - 1]) && word_char(text[end])) return false;
  return true;
}

bool span_free(const std::vector<char>& consumed, std::size_t begin, std::size_t end) {
  for (std::size_t i = begin; i < end; ++i)
    if (consumed[i]) return false;
  return true;
}

// gap between two character spans; 0 when they touch or overlap
int span_distance(const Entity& a, const Entity& b) {
  if (a.end <= b.begin) return b.begin - a.end;
  if (b.end <= a.begin) return a.begin - b.end;
  return 0;
}

// nearest entity of `type` to `anchor`, ties to the earlier span start
const Entity* nearest_of(const std::vector<Entity>& ents, const Entity& anchor,
                         EntityType type) {
  const Entity* best = nullptr;
  int best_dist = 0;
  for (const Entity& e : ents) {
    if (e.type != type) continue;
    int d = span_distance(anchor, e);
    if (!best || d < best_dist || (d == best_dist && e.begin < best->begin)) {
      best = &e;
      best_dist = d;
    }
  }
  return best;
}

// Signal for a modality mention.  Reports announce the signal before the
// modality ("hyperintensity on T2WI, T2FLAIR, and DWI"), so a modality binds
// the nearest signal that starts before it; only when no signal precedes
// ("T1WI shows hypointensity") does it fall back to the nearest following one.
// A symmetric nearest-by-distance rule would mis-pair enumerations such as
// "hypointensity on T1WI, hyperintensity on T2WI": the comma gap after T1WI
// is shorter than the " on " gap before it.
const Entity* signal_for_modality(const std::vector<Entity>& ents,
                                  const Entity& modality) {
  const Entity* best = nullptr;
  int best_dist = 0;
  bool best_precedes = false;
  for (const Entity& e : ents) {
    if (e.type != EntityType::signal) continue;
    bool precedes = e.begin < modality.begin;
    int d = span_distance(modality, e);
    bool better;
    if (!best)
      better = true;
    else if (precedes != best_precedes)
      better = precedes;
    else
      better = d < best_dist || (d == best_dist && e.begin < best->begin);
    if (better) {
      best = &e;
      best_dist = d;
      best_precedes = precedes;
    }
  }
  return best;
}

std::string cap_first(std::string s) {
  for (char& c : s)
    if (word_char(c)) {
      c = char(std::toupper((unsigned char)c));
      break;
    }
  return s;
}

void append_part(std::string& out, const std::string& part) {
  if (part.empty()) return;
  if (!out.empty()) out.push_back(' ');
  out += part;
}

void push_unique(std::vector<StructuredSentence>& list, const StructuredSentence& s) {
  if (std::find(list.begin(), list.end(), s) == list.end()) list.push_back(s);
}

}  // namespace

std::string render_sentence(const StructuredSentence& s) {
  std::string out;
  switch (s.kind) {
    case SentenceKind::sig: {
      append_part(out, s.morphology);
      append_part(out, s.modality);
      append_part(out, s.signal);
      std::string loc;
      append_part(loc, s.side);
      append_part(loc, s.anatomy);
      if (!loc.empty()) {
        append_part(out, "on");
        append_part(out, loc);
      }
      break;
    }
    case SentenceKind::morph: {
      append_part(out, s.side);
      append_part(out, s.anatomy);
      append_part(out, s.morphology);
      break;
    }
    case SentenceKind::patho: {
      append_part(out, s.pathology);
      std::string loc;
      append_part(loc, s.side);
      append_part(loc, s.anatomy);
      if (!loc.empty()) {
        append_part(out, "is located at");
        append_part(out, loc);
      }
      break;
    }
  }
  return cap_first(out);
}

std::string join_sentences(const std::vector<StructuredSentence>& list) {
  std::string out;
  for (const auto& s : list) {
    if (!out.empty()) out += ". ";
    out += s.rendered;
  }
  return out;
}

std::vector<std::string> split_sentences(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    if (c == '.' || c == ';' || c == '!' || c == '?') {
      std::string t = trim(cur);
      if (!t.empty()) out.push_back(std::move(t));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  std::string t = trim(cur);
  if (!t.empty()) out.push_back(std::move(t));
  return out;
}

std::vector<Entity> extract_entities(const std::string& sentence, const Lexicon& lex) {
  std::string text = normalize_ws(to_lower(sentence));
  std::vector<char> consumed(text.size(), 0);
  std::vector<Entity> out;

  // lex.entries is ordered longest surface first, so trying entries in order
  // at each position implements longest-match; consumed spans block overlaps
  for (std::size_t pos = 0; pos < text.size(); ++pos) {
    if (consumed[pos]) continue;
    for (const LexEntry& e : lex.entries) {
      std::size_t end = pos + e.surface.size();
      if (end > text.size()) continue;
      if (text.compare(pos, e.surface.size(), e.surface) != 0) continue;
      if (!on_word_boundary(text, pos, end)) continue;
      if (!span_free(consumed, pos, end)) continue;
      Entity ent;
      ent.type = e.type;
      ent.canonical = e.canonical;
      ent.begin = int(pos);
      ent.end = int(end);
      out.push_back(std::move(ent));
      for (std::size_t i = pos; i < end; ++i) consumed[i] = 1;
      pos = end - 1;  // loop increment moves past the span
      break;
    }
  }

  // negation cues: same scan rules, but they never displace an entity
  std::vector<int> cue_ends;
  for (std::size_t pos = 0; pos < text.size(); ++pos) {
    if (consumed[pos]) continue;
    for (const std::string& cue : lex.negation_cues) {
      std::size_t end = pos + cue.size();
      if (end > text.size()) continue;
      if (text.compare(pos, cue.size(), cue) != 0) continue;
      if (!on_word_boundary(text, pos, end)) continue;
      if (!span_free(consumed, pos, end)) continue;
      cue_ends.push_back(int(end));
      pos = end - 1;
      break;
    }
  }
  for (Entity& e : out) {
    if (e.type != EntityType::pathology) continue;
    for (int ce : cue_ends)
      if (e.begin >= ce) {
        e.negated = true;
        break;
      }
  }

  std::sort(out.begin(), out.end(),
            [](const Entity& a, const Entity& b) { return a.begin < b.begin; });
  return out;
}

std::vector<StructuredSentence> structure_sentence(const std::vector<Entity>& entities,
                                                   const Lexicon& lex) {
  (void)lex;
  std::vector<StructuredSentence> out;

  bool has_signal = false, has_modality = false;
  for (const Entity& e : entities) {
    if (e.type == EntityType::signal) has_signal = true;
    if (e.type == EntityType::modality) has_modality = true;
  }

  if (has_signal) {
    auto make_sig = [&](const Entity& anchor, const Entity* signal) {
      StructuredSentence s;
      s.kind = SentenceKind::sig;
      if (anchor.type == EntityType::modality) s.modality = anchor.canonical;
      if (signal) s.signal = signal->canonical;
      if (const Entity* m = nearest_of(entities, anchor, EntityType::morphology))
        s.morphology = m->canonical;
      if (const Entity* sd = nearest_of(entities, anchor, EntityType::side))
        s.side = sd->canonical;
      if (const Entity* a = nearest_of(entities, anchor, EntityType::anatomy))
        s.anatomy = a->canonical;
      s.rendered = render_sentence(s);
      push_unique(out, s);
    };
    if (has_modality) {
      // one signal sentence per mentioned modality, paired with its nearest signal
      for (const Entity& e : entities)
        if (e.type == EntityType::modality)
          make_sig(e, signal_for_modality(entities, e));
    } else {
      // no modality named: keep the finding but leave the modality slot empty
      for (const Entity& e : entities)
        if (e.type == EntityType::signal) make_sig(e, &e);
    }
  } else {
    // structural change descriptions; union of nearest pairs both ways keeps
    // coordinated findings ("sulci and ventricles ... enlarged") complete
    auto make_morph = [&](const Entity& anatomy, const Entity& morph) {
      StructuredSentence s;
      s.kind = SentenceKind::morph;
      s.anatomy = anatomy.canonical;
      s.morphology = morph.canonical;
      if (const Entity* sd = nearest_of(entities, anatomy, EntityType::side))
        s.side = sd->canonical;
      s.rendered = render_sentence(s);
      push_unique(out, s);
    };
    for (const Entity& e : entities) {
      if (e.type == EntityType::morphology) {
        if (const Entity* a = nearest_of(entities, e, EntityType::anatomy)) make_morph(*a, e);
      } else if (e.type == EntityType::anatomy) {
        if (const Entity* m = nearest_of(entities, e, EntityType::morphology)) make_morph(e, *m);
      }
    }
  }

  for (const Entity& e : entities) {
    if (e.type != EntityType::pathology || e.negated) continue;
    StructuredSentence s;
    s.kind = SentenceKind::patho;
    s.pathology = e.canonical;
    if (const Entity* a = nearest_of(entities, e, EntityType::anatomy)) {
      s.anatomy = a->canonical;
      if (const Entity* sd = nearest_of(entities, *a, EntityType::side)) s.side = sd->canonical;
    }
    s.rendered = render_sentence(s);
    push_unique(out, s);
  }

  return out;
}

DecomposedReport decompose_report(const ReportDocument& report, const Lexicon& lex) {
  DecomposedReport out;
  int K = int(lex.modalities.size());
  int C = lex.num_classes();
  out.per_modality.assign(std::size_t(K), {});
  out.labels.assign(std::size_t(C), 0);

  auto route = [&](const StructuredSentence& s) {
    push_unique(out.global, s);
    if (s.kind == SentenceKind::sig && !s.modality.empty()) {
      int k = lex.modality_index(s.modality);
      if (k >= 0) push_unique(out.per_modality[std::size_t(k)], s);
      return;
    }
    // modality-agnostic knowledge is shared with every modality list
    for (auto& list : out.per_modality) push_unique(list, s);
  };

  auto analyze = [&](const std::vector<std::string>& block, bool label_source) {
    for (const std::string& raw : block) {
      for (const std::string& sentence : split_sentences(raw)) {
        auto entities = extract_entities(sentence, lex);
        for (const auto& s : structure_sentence(entities, lex)) route(s);
        if (label_source)
          for (const Entity& e : entities)
            if (e.type == EntityType::pathology && !e.negated) {
              int c = lex.class_index(e.canonical);
              if (c >= 0) out.labels[std::size_t(c)] = 1;
            }
      }
    }
  };

  analyze(report.findings, false);
  analyze(report.impression, true);

  out.modality_keys.resize(std::size_t(K));
  for (int k = 0; k < K; ++k)
    out.modality_keys[std::size_t(k)] = join_sentences(out.per_modality[std::size_t(k)]);
  out.global_key = join_sentences(out.global);
  return out;
}

LabelingEval evaluate_labeling(const std::vector<std::vector<int>>& pred,
                               const std::vector<std::vector<int>>& gold) {
  if (pred.size() != gold.size())
    fail(ErrCode::validation, "evaluate_labeling: prediction/gold case counts differ");
  if (pred.empty()) fail(ErrCode::validation, "evaluate_labeling: no cases");
  std::size_t C = gold[0].size();
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (pred[i].size() != C || gold[i].size() != C)
      fail(ErrCode::validation, "evaluate_labeling: ragged label vectors");

  auto run_task = [&](int positive) {
    LabelingEval::Task task;
    long micro_tp = 0, micro_fp = 0, micro_fn = 0;
    for (std::size_t c = 0; c < C; ++c) {
      long tp = 0, fp = 0, fn = 0;
      for (std::size_t i = 0; i < pred.size(); ++i) {
        bool p = pred[i][c] == positive;
        bool g = gold[i][c] == positive;
        if (p && g) ++tp;
        else if (p && !g) ++fp;
        else if (!p && g) ++fn;
      }
      micro_tp += tp;
      micro_fp += fp;
      micro_fn += fn;
      double f1 = (tp + fp + fn == 0) ? 100.0 : 100.0 * 2.0 * double(tp) /
                                                    double(2 * tp + fp + fn);
      task.per_class_f1.push_back(f1);
    }
    task.micro_f1 = (micro_tp + micro_fp + micro_fn == 0)
                        ? 100.0
                        : 100.0 * 2.0 * double(micro_tp) /
                              double(2 * micro_tp + micro_fp + micro_fn);
    double sum = 0.0;
    for (double f : task.per_class_f1) sum += f;
    task.macro_f1 = sum / double(C);
    return task;
  };

  LabelingEval out;
  out.mention = run_task(1);
  out.negation = run_task(0);
  return out;
}

}  // namespace ub
