"""
内核语言与指令的 Lark 文法
"""

# 表达式文法由内核语言和指令子句共用
EXPR_GRAMMAR = r"""
?expr: sum_expr
     | sum_expr "<" sum_expr   -> lt
     | sum_expr "<=" sum_expr  -> le
     | sum_expr ">" sum_expr   -> gt
     | sum_expr ">=" sum_expr  -> ge
     | sum_expr "==" sum_expr  -> eq
     | sum_expr "!=" sum_expr  -> ne

?sum_expr: product
     | sum_expr "+" product    -> add
     | sum_expr "-" product    -> sub

?product: unary
     | product "*" unary       -> mul
     | product "/" unary       -> div
     | product "%" unary       -> mod

?unary: "-" unary              -> neg
     | atom

?atom: INT                     -> int_lit
     | FLOAT                   -> float_lit
     | NAME                    -> ident
     | NAME subscript+         -> index
     | NAME "(" ")"            -> intrinsic
     | NAME "." NAME           -> member
     | "(" expr ")"

subscript: "[" expr "]"                                 -> sub_index
         | "[" [expr] ":" [expr] [":" expr] "]"         -> sub_section

NAME: /[A-Za-z_][A-Za-z0-9_]*/
FLOAT.2: /(\d+\.\d*|\.\d+)([eE][-+]?\d+)?[fF]?|\d+[eE][-+]?\d+[fF]?/
INT: /\d+/

%import common.WS
%ignore WS
"""

KERNEL_GRAMMAR = r"""
start: function*

function: [GLOBAL] type_name NAME "(" [param ("," param)*] ")" block

GLOBAL: "__global__"

type_name: INT_KW | FLOAT_KW | DOUBLE_KW | VOID_KW
INT_KW: "int"
FLOAT_KW: "float"
DOUBLE_KW: "double"
VOID_KW: "void"

param: type_name NAME dim*          -> array_or_scalar_param
     | type_name "*" NAME           -> pointer_param
dim: "[" [expr] "]"

block: "{" stmt* "}"

?stmt: block
     | decl ";"
     | assign ";"
     | call ";"
     | "return" [expr] ";"                              -> return_stmt
     | "if" "(" expr ")" stmt ["else" stmt]             -> if_stmt
     | "for" "(" for_init ";" expr ";" for_update ")" stmt  -> for_stmt
     | PRAGMA                                           -> pragma
     | ";"                                              -> empty_stmt

decl: type_name NAME ["=" expr]
assign: lvalue ASSIGN_OP expr
lvalue: NAME                      -> lv_ident
      | NAME ("[" expr "]")+      -> lv_index
ASSIGN_OP: "=" | "+=" | "-=" | "*=" | "/="

call: NAME "(" [expr ("," expr)*] ")"                              -> plain_call
    | NAME "<<<" expr "," expr ">>>" "(" [expr ("," expr)*] ")"    -> launch_call

?for_init: decl | assign
for_update: NAME "++"               -> post_inc
          | "++" NAME               -> pre_inc
          | NAME "--"               -> post_dec
          | "--" NAME               -> pre_dec
          | NAME ASSIGN_OP expr     -> step_update

PRAGMA: /#[ \t]*pragma[^\n]*/

%ignore /\/\/[^\n]*/
%ignore /\/\*(.|\n)*?\*\//
%ignore /#[ \t]*include[^\n]*/
""" + EXPR_GRAMMAR

DIRECTIVE_GRAMMAR = r"""
start: PRAGMA_HEAD NAME item*

PRAGMA_HEAD: /#[ \t]*pragma/

item: NAME                          -> bare_item
    | NAME "(" clause_args ")"      -> paren_item

clause_args: [modifier ":"] expr ("," expr)*

modifier: NAME                      -> mod_name
        | "+"                       -> mod_plus
        | "-"                       -> mod_minus
        | "*"                       -> mod_times
""" + EXPR_GRAMMAR
