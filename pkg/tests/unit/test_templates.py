import os
import random
import sys
import tempfile
import unittest

import numpy as np

# Add the project root to the path
project_root = os.path.dirname(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
sys.path.insert(0, project_root)

from core.exceptions import MissingBindingError, TemplateError, ValidationError
from core.templates import BackwardInfo, load, load_file, load_named, render, select_message, serialize

SHIPPED = ("classify_forward", "classify_residual", "hidden_step_by_step", "hidden_brief_analysis",
           "hidden_given_answer", "hidden_backward", "prompt_proposal_v3.5", "prompt_proposal_v3.0")


class TestShippedTemplates(unittest.TestCase):
    """Golden renders of the shipped template documents."""

    def test_all_shipped_templates_load(self):
        for name in SHIPPED:
            template = load_named(name)
            self.assertEqual(template.name, name)

    def test_classify_forward_golden(self):
        rendered = render(load_named("classify_forward"), {"prompt": "Is it positive?", "input": "great film"})
        self.assertEqual(rendered, "Is it positive?\n\ngreat film\n  \nAnswer:")

    def test_classify_residual_golden(self):
        rendered = render(load_named("classify_residual"),
                          {"prompt": "Is it positive?", "input": "great film", "h": "The film is praised."})
        self.assertEqual(rendered,
                         "Is it positive?\n\ngreat film\nYour thoughts were:\nThe film is praised.\n  \nAnswer:")

    def test_hidden_step_by_step_golden(self):
        rendered = render(load_named("hidden_step_by_step"), {"prompt": "", "input": "great film"})
        self.assertEqual(rendered, "great film\n  \n Let's think step by step.")
        rendered = render(load_named("hidden_step_by_step"), {"prompt": "Decompose.", "input": "great film"})
        self.assertEqual(rendered, "great film\n  \nDecompose. Let's think step by step.")

    def test_hidden_brief_analysis_golden(self):
        rendered = render(load_named("hidden_brief_analysis"), {"prompt": "Reflect.", "input": "great"})
        self.assertEqual(rendered, "Reflect.\n  \ngreat\n\nBrief Analysis:")

    def test_hidden_given_answer_golden(self):
        rendered = render(load_named("hidden_given_answer"), {"prompt": "Reflect.", "input": "great", "y": "pos"})
        self.assertEqual(rendered, "great\n\nGiven that the answer is:\npos\n    \nReflect. Let's think step by step.")

    def test_proposal_splits_successes_and_errors(self):
        template = load_named("prompt_proposal_v3.5")
        infos = [BackwardInfo(input="first input", target="pos", output=" Pos. "),
                 BackwardInfo(input="second input", target="neg", output="pos")]
        rendered = render(template, {"prompt": "Classify.", "backward_infos": infos}, 0)

        successes, errors = rendered.split("# Student errors")
        self.assertIn("This was the instruction.\n## Instruction\n> Classify.\n[END]", successes)
        self.assertIn("## Input:\n> first input\n## Correct Output:\n> pos\n", successes)
        self.assertNotIn("second input", successes)
        self.assertIn("## Input:\n> second input\n## Student Output:\n> pos\n## Correct Output:\n> neg\n", errors)
        self.assertTrue(rendered.endswith(
            "Improve the instruction to fix the student errors. Clarify the instruction by adding few words "
            "or a short sentence. Be concise.\n## Instruction\n>"))
        self.assertNotIn("{%", rendered)

    def test_v30_drops_be_concise(self):
        v35 = load_named("prompt_proposal_v3.5")
        v30 = load_named("prompt_proposal_v3.0")
        self.assertEqual(v30.body, v35.body)
        self.assertEqual(len(v30.message_alternatives), len(v35.message_alternatives))
        for short, full in zip(v30.message_alternatives, v35.message_alternatives):
            self.assertNotIn("Be concise.", short)
            self.assertEqual(full.replace(" Be concise.", ""), short)

    def test_backward_hidden_template_has_messages(self):
        template = load_named("hidden_backward")
        self.assertEqual(template.required_vars, frozenset({"next_prompt", "input", "h", "y", "message"}))
        rendered = render(template, {"next_prompt": "Classify.", "input": "x", "h": "hmm", "y": "pos"}, 1)
        self.assertIn("These were your thoughts:\nhmm", rendered)
        self.assertIn(template.message_alternatives[1], rendered)


class TestTemplateDocuments(unittest.TestCase):

    def test_missing_binding(self):
        template = load("template: '{{ prompt }} {{ input }}'")
        with self.assertRaises(MissingBindingError) as ctx:
            render(template, {"prompt": "p"})
        self.assertEqual(ctx.exception.placeholder, "input")

    def test_extra_bindings_are_ignored(self):
        template = load("template: '{{ input }}'")
        self.assertEqual(render(template, {"input": "x", "unused": 1}), "x")

    def test_rejects_invalid_documents(self):
        for source in ("template: ''", "other: 1", "template: x\nextra: y", "template: '{{ x | upper }}'",
                       "template: '{% if x %}a{% endif %}'", "template: '{{ message }}'",
                       "template: a\ntemplate: b", "template: '{{ x'"):
            with self.assertRaises(TemplateError, msg=source):
                load(source)

    def test_loop_only_over_backward_infos(self):
        with self.assertRaises(TemplateError):
            load("template: '{% for item in items %}{{ item }}{% endfor %}'")

    def test_select_message(self):
        template = load("template: '{{ message }}'\nmessage_alternatives: [a, b, c]")
        self.assertEqual(select_message(template, None), (0, "a"))
        self.assertEqual(select_message(template, 2), (2, "c"))
        with self.assertRaises(ValidationError):
            select_message(template, 3)
        index, text = select_message(template, np.random.default_rng(0))
        self.assertEqual(text, template.message_alternatives[index])
        self.assertEqual(select_message(template, random.Random(1)),
                         select_message(template, random.Random(1)))

    def test_seeded_renders_cover_every_alternative(self):
        for name in ("prompt_proposal_v3.5", "prompt_proposal_v3.0", "hidden_backward"):
            template = load_named(name)
            if "message" not in template.required_vars:
                continue
            binding = {var: [BackwardInfo("x", "yes", "no")] if var == "backward_infos" else "v"
                       for var in template.required_vars if var != "message"}
            with self.subTest(template=name):
                seen = set()
                for seed in range(120):
                    index, _ = select_message(template, np.random.default_rng(seed))
                    rendered = render(template, binding, np.random.default_rng(seed))
                    expected = render(template, {**binding, "message": template.message_alternatives[index]})
                    self.assertEqual(rendered, expected)
                    seen.add(index)
                self.assertEqual(seen, set(range(len(template.message_alternatives))))

    def test_serialize_loads_back(self):
        for name in SHIPPED:
            template = load_named(name)
            again = load(serialize(template), name=name)
            self.assertEqual(again.body, template.body)
            self.assertEqual(again.message_alternatives, template.message_alternatives)

    def test_load_file_and_paths(self):
        with tempfile.TemporaryDirectory() as directory:
            path = os.path.join(directory, "custom.yaml")
            with open(path, "w", encoding="utf-8") as f:
                f.write("template: |-\n  {{ prompt }}\n  {{ input }}\n")
            self.assertEqual(load_file(path).name, "custom")
            self.assertEqual(render(load_named(path), {"prompt": "p", "input": "i"}), "p\ni")
        with self.assertRaises(TemplateError):
            load_named("does_not_exist")

    def test_backward_info_success(self):
        self.assertTrue(BackwardInfo(input="x", target="Yes", output=" yes.").is_success)
        self.assertFalse(BackwardInfo(input="x", target="Yes", output="no").is_success)
        with self.assertRaises(ValidationError):
            BackwardInfo(input="", target="y")


if __name__ == '__main__':
    unittest.main()
